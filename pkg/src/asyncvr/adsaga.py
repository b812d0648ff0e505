"""Asynchronous distributed SAGA under the stochastic delay model.

The canonical semantics is the *logical* per-iteration update: when
machine j wakes (probability p_j) holding the pending update h_j it
computed after its previous visit, the server applies, in order,

    1. alpha[i_j] <- g_j                      (worker's deferred table write)
    2. x <- x - eta*(p_min/p_j) * (u_j + abar)
    3. abar <- abar + h_j / n
    4. u_j <- u_j - (m/n) * h_j
    5. draw i uniform in S_j; g <- grad f_i(x_entry); beta <- alpha[i];
       h <- g - beta                          (next pending update)
    6. u_j <- u_j * (1 - p_min/p_j) + (p_min/p_j) * h
    7. i_j <- i; x_j <- x_entry

where x_entry is the iterate at the start of the iteration: the worker
receives the iterate *before* the server applies the update, so its
gradient is evaluated at the pre-update x.  Steps 4 and 6 combine into
u_new = u_old*(1-r) + r*h_new - (m/n)*(1-r)*h_old with r = p_min/p_j,
which is the form the convergence analysis is proved for; the message
protocol in :mod:`asyncvr.runtime` schedules arrivals so the realized
state sequence is exactly this one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .delays import DelayModel, sample_machine
from .problems import Partition, Problem, grad_component, objective_gap
from .sampling import StepStream, initial_indices, split_seed
from .traces import StopRule, Trace, TraceRecorder

STAR_IDENTITY_TOL = 1e-12


@dataclass
class ServerState:
    """Central iterate, running gradient average, and per-machine history."""

    x: np.ndarray          # (d,)
    alpha_bar: np.ndarray  # (d,)
    u: np.ndarray          # (m, d)
    iteration: int = 0


@dataclass
class WorkerState:
    """One machine's stale iterate, pending update, and local gradient table."""

    x_local: np.ndarray              # (d,)
    h: np.ndarray                    # (d,) pending update g - beta
    g: np.ndarray                    # (d,) last gradient computed
    beta: np.ndarray                 # (d,) table value g displaced
    i_cur: int                       # function index behind g and beta
    alpha_local: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class StepInfo:
    """What one logical iteration did; enough to recheck its algebra."""

    j: int
    i: int
    ratio: float
    x_entry: np.ndarray
    h_old: np.ndarray
    u_entry: np.ndarray
    h_new: np.ndarray


def init(
    problem: Problem,
    partition: Partition,
    x0: np.ndarray,
    rng: np.random.Generator | None = None,
    initial_i: np.ndarray | None = None,
) -> tuple[ServerState, list[WorkerState]]:
    """Zero-initialized server and worker states.

    Every gradient-like quantity starts at zero; each machine's i_j is a
    uniform draw from its partition cell (pass ``initial_i`` to replay).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (problem.d,):
        raise ValueError(f"x0 must have shape ({problem.d},)")
    m, d = partition.m, problem.d
    if initial_i is None:
        if rng is None:
            raise ValueError("need rng or explicit initial indices")
        positions = rng.integers(0, partition.per_machine, size=m)
        initial_i = np.array(
            [partition.assignments[j][positions[j]] for j in range(m)]
        )
    server = ServerState(
        x=x0.copy(), alpha_bar=np.zeros(d), u=np.zeros((m, d))
    )
    workers = []
    for j in range(m):
        workers.append(
            WorkerState(
                x_local=x0.copy(),
                h=np.zeros(d),
                g=np.zeros(d),
                beta=np.zeros(d),
                i_cur=int(initial_i[j]),
                alpha_local={int(i): np.zeros(d) for i in partition.assignments[j]},
            )
        )
    return server, workers


def step_size_local(eta: float, model: DelayModel, j: int) -> float:
    """Machine-specific step size eta * p_min / p_j."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return eta * model.p_min / float(model.p[j])


def logical_step(
    server: ServerState,
    workers: list[WorkerState],
    problem: Problem,
    partition: Partition,
    model: DelayModel,
    eta: float,
    rng: np.random.Generator | None = None,
    j: int | None = None,
    i: int | None = None,
    validate: bool = False,
) -> StepInfo:
    """One logical iteration, mutating server and workers in place.

    j and i may be forced (enumeration, replay); otherwise they are
    drawn from ``rng``.  With ``validate`` the combined u-update identity
    is rechecked to 1e-12.
    """
    if j is None:
        j = sample_machine(model, rng)
    w = workers[j]
    if i is None:
        cell = partition.assignments[j]
        i = int(cell[rng.integers(0, cell.size)])
    n = problem.n
    m = partition.m
    ratio = model.p_min / float(model.p[j])
    x_entry = server.x.copy()
    h_old = w.h.copy()
    u_entry = server.u[j].copy() if validate else None

    w.alpha_local[w.i_cur] = w.g.copy()
    server.x = server.x - (eta * ratio) * (server.u[j] + server.alpha_bar)
    server.alpha_bar = server.alpha_bar + h_old / n
    server.u[j] = server.u[j] - (m / n) * h_old

    g_new = grad_component(problem, i, x_entry)
    beta_new = w.alpha_local[i].copy()  # table value after the step-1 swap
    h_new = g_new - beta_new
    server.u[j] = server.u[j] * (1.0 - ratio) + ratio * h_new

    w.g = g_new
    w.beta = beta_new
    w.h = h_new
    w.i_cur = i
    w.x_local = x_entry
    server.iteration += 1

    if validate:
        combined = (
            u_entry * (1.0 - ratio)
            + ratio * h_new
            - (m / n) * (1.0 - ratio) * h_old
        )
        err = float(np.max(np.abs(server.u[j] - combined)))
        if err > STAR_IDENTITY_TOL:
            raise AssertionError(f"combined u-update identity violated: {err:.3e}")
    return StepInfo(
        j=j,
        i=i,
        ratio=ratio,
        x_entry=x_entry,
        h_old=h_old,
        u_entry=u_entry if validate else None,
        h_new=h_new,
    )


def check_state_invariants(
    server: ServerState,
    workers: list[WorkerState],
    problem: Problem,
    model: DelayModel,
) -> dict[str, float]:
    """Residuals of the state invariants; all should be ~0 at iteration ends.

    Returns absolute residuals for: alpha_bar vs the table mean, the
    alpha[i_j] = beta_j identity, h_j = g_j - beta_j, and (under uniform
    rates) u_j = h_j.
    """
    n, d = problem.n, problem.d
    total = np.zeros(d)
    count = 0
    beta_res = 0.0
    h_res = 0.0
    for w in workers:
        for v in w.alpha_local.values():
            total += v
            count += 1
        beta_res = max(beta_res, float(np.max(np.abs(w.alpha_local[w.i_cur] - w.beta))))
        h_res = max(h_res, float(np.max(np.abs(w.h - (w.g - w.beta)))))
    assert count == n
    scale = 1.0 + float(np.max(np.abs(server.alpha_bar)))
    abar_res = float(np.max(np.abs(server.alpha_bar - total / n))) / scale
    out = {"alpha_bar": abar_res, "beta": beta_res, "h": h_res}
    if model.p_max == model.p_min:
        u_res = 0.0
        for j, w in enumerate(workers):
            u_res = max(u_res, float(np.max(np.abs(server.u[j] - w.h))))
        out["u_eq_h"] = u_res
    return out


# --- step-size and iteration-count calculators --------------------------


def theoretical_r(m: int, n: int, model: DelayModel) -> float:
    """The constant r = 8*(76 + 168*(p_max/p_min)^2 * m/n) / 3."""
    rho = model.p_max / model.p_min
    return 8.0 * (76.0 + 168.0 * rho * rho * m / n) / 3.0


def theoretical_eta(problem: Problem, m: int, model: DelayModel) -> float:
    """Analysis step size 1 / (2 r L + 2 sqrt(r m L_f L))."""
    r = theoretical_r(m, problem.n, model)
    L, L_f = problem.L, problem.L_f
    return 1.0 / (2.0 * r * L + 2.0 * math.sqrt(r * m * L_f * L))


def theoretical_iterations(
    problem: Problem,
    m: int,
    model: DelayModel,
    eps: float,
    x0: np.ndarray,
) -> int:
    """Iteration count sufficient for an expected objective gap of eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    r = theoretical_r(m, problem.n, model)
    eta = theoretical_eta(problem, m, model)
    L, L_f, mu, n = problem.L, problem.L_f, problem.mu, problem.n
    gap0 = objective_gap(problem, np.asarray(x0, dtype=np.float64))
    numerator = (1.0 + 1.0 / (2.0 * m * mu * eta)) * gap0 + n * problem.sigma_sq / (
        2.0 * L
    )
    if eps >= numerator:
        raise ValueError(
            f"eps={eps} is at or above the initial bound {numerator}; "
            "zero iterations already suffice"
        )
    prefactor = m * model.p_min * (
        4.0 * n + 2.0 * r * L / mu + 2.0 * math.sqrt(r * m * L_f * L) / mu
    )
    return math.ceil(prefactor * math.log(numerator / eps))


# --- run driver ----------------------------------------------------------


def run(
    problem: Problem,
    partition: Partition,
    model: DelayModel,
    eta: float,
    stop: StopRule,
    seed: int,
    log_every: str = "iteration",
    validate: bool = False,
) -> Trace:
    """Drive logical steps from the zero init until the stop rule fires.

    All randomness comes from ``seed`` via the documented stream split in
    :mod:`asyncvr.sampling`.
    """
    init_ss, step_ss = split_seed(seed)
    initial_i = initial_indices(partition, init_ss)
    x0 = np.zeros(problem.d)
    server, workers = init(problem, partition, x0, initial_i=initial_i)
    stream = StepStream(step_ss, model, partition)
    rec = TraceRecorder(problem, stop, log_every=log_every)
    rec.observe(0, -1, server.x)
    while not rec.done:
        j, i = stream.next()
        logical_step(
            server, workers, problem, partition, model, eta,
            j=j, i=i, validate=validate,
        )
        rec.observe(server.iteration, j, server.x)
    return rec.finish(server.x)
