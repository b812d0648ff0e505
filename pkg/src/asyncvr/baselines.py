"""Reference algorithms run under the same delay model and problem oracle.

All asynchronous baselines follow the same message convention as the main
algorithm: a worker's stale iterate is the value the server held *before*
applying that worker's previous update (the parameter reply precedes the
server-side write).  Synchronous minibatch baselines take one aggregated
step per round with gradients at the current iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delays import DelayModel, sample_machine
from .problems import Partition, Problem, grad_component
from .sampling import StepStream, split_seed
from .traces import StopRule, Trace, TraceRecorder


@dataclass
class AsagaState:
    """Shared-data asynchronous SAGA: global table, stale per-machine iterates."""

    x: np.ndarray          # (d,)
    alpha: np.ndarray      # (n, d)
    alpha_bar: np.ndarray  # (d,)
    x_local: np.ndarray    # (m, d)


@dataclass
class IagState:
    """Incremental aggregated gradient with per-machine cyclic selection."""

    x: np.ndarray
    alpha: np.ndarray       # (n, d)
    alpha_sum: np.ndarray   # (d,)
    x_local: np.ndarray     # (m, d)
    cursors: np.ndarray     # (m,) position within the machine's sorted cell


@dataclass
class SgdState:
    """Asynchronous SGD: no table, just stale iterates."""

    x: np.ndarray
    x_local: np.ndarray


@dataclass
class MinibatchState:
    """Synchronous minibatch table state."""

    x: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def init_asaga(problem: Problem, m: int, x0: np.ndarray) -> AsagaState:
    d = problem.d
    return AsagaState(
        x=np.array(x0, dtype=np.float64),
        alpha=np.zeros((problem.n, d)),
        alpha_bar=np.zeros(d),
        x_local=np.tile(np.asarray(x0, dtype=np.float64), (m, 1)),
    )


def init_iag(problem: Problem, partition: Partition, x0: np.ndarray) -> IagState:
    d = problem.d
    return IagState(
        x=np.array(x0, dtype=np.float64),
        alpha=np.zeros((problem.n, d)),
        alpha_sum=np.zeros(d),
        x_local=np.tile(np.asarray(x0, dtype=np.float64), (partition.m, 1)),
        cursors=np.zeros(partition.m, dtype=np.int64),
    )


def init_sgd(problem: Problem, m: int, x0: np.ndarray) -> SgdState:
    return SgdState(
        x=np.array(x0, dtype=np.float64),
        x_local=np.tile(np.asarray(x0, dtype=np.float64), (m, 1)),
    )


def init_minibatch(problem: Problem, x0: np.ndarray) -> MinibatchState:
    return MinibatchState(
        x=np.array(x0, dtype=np.float64),
        alpha=np.zeros((problem.n, problem.d)),
        alpha_bar=np.zeros(problem.d),
    )


def asaga_step(
    state: AsagaState,
    problem: Problem,
    model: DelayModel,
    eta: float,
    rng: np.random.Generator | None = None,
    j: int | None = None,
    i: int | None = None,
) -> AsagaState:
    """One delivery event in shared-data mode: any machine, any function."""
    if j is None:
        j = sample_machine(model, rng)
    if i is None:
        i = int(rng.integers(0, problem.n))
    g = grad_component(problem, i, state.x_local[j])
    update = g - state.alpha[i] + state.alpha_bar
    x_pre = state.x.copy()
    state.x = state.x - eta * update
    state.alpha_bar = state.alpha_bar + (g - state.alpha[i]) / problem.n
    state.alpha[i] = g
    state.x_local[j] = x_pre
    return state


def iag_step(
    state: IagState,
    problem: Problem,
    partition: Partition,
    model: DelayModel,
    eta: float,
    rng: np.random.Generator | None = None,
    j: int | None = None,
) -> IagState:
    """One delivery event: cyclic pick within the machine, SAG-average update."""
    if j is None:
        j = sample_machine(model, rng)
    cell = partition.assignments[j]
    i = int(cell[state.cursors[j]])
    state.cursors[j] = (state.cursors[j] + 1) % cell.size
    g = grad_component(problem, i, state.x_local[j])
    direction = (g + state.alpha_sum - state.alpha[i]) / problem.n
    x_pre = state.x.copy()
    state.x = state.x - eta * direction
    state.alpha_sum = state.alpha_sum + (g - state.alpha[i])
    state.alpha[i] = g
    state.x_local[j] = x_pre
    return state


def async_sgd_step(
    state: SgdState,
    problem: Problem,
    partition: Partition,
    model: DelayModel,
    eta: float,
    rng: np.random.Generator | None = None,
    j: int | None = None,
    i: int | None = None,
) -> SgdState:
    """One delivery event: plain stochastic gradient at the stale iterate."""
    if j is None:
        j = sample_machine(model, rng)
    if i is None:
        cell = partition.assignments[j]
        i = int(cell[rng.integers(0, cell.size)])
    g = grad_component(problem, i, state.x_local[j])
    x_pre = state.x.copy()
    state.x = state.x - eta * g
    state.x_local[j] = x_pre
    return state


def draw_minibatch(
    problem: Problem,
    mode: str,
    partition: Partition | None,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One index per machine: within its cell (distributed) or i.i.d. [n] (shared)."""
    if mode == "shared":
        return rng.integers(0, problem.n, size=m)
    if mode == "distributed":
        if partition is None or partition.m != m:
            raise ValueError("distributed mode needs a partition of matching m")
        positions = rng.integers(0, partition.per_machine, size=m)
        return np.array(
            [partition.assignments[j][positions[j]] for j in range(m)]
        )
    raise ValueError("mode must be 'shared' or 'distributed'")


def minibatch_saga_step(
    state: MinibatchState,
    problem: Problem,
    mode: str,
    partition: Partition | None,
    m: int,
    eta: float,
    rng: np.random.Generator | None = None,
    batch: np.ndarray | None = None,
) -> MinibatchState:
    """One aggregated round: x <- x - eta * sum_j (grad_{i_j} - alpha_{i_j} + abar).

    Table refresh happens after the step; duplicate draws in shared mode
    resolve last-writer-wins in machine order.
    """
    if batch is None:
        batch = draw_minibatch(problem, mode, partition, m, rng)
    grads = [grad_component(problem, int(i), state.x) for i in batch]
    update = np.zeros(problem.d)
    for i, g in zip(batch, grads):
        update += g - state.alpha[int(i)]
    update += m * state.alpha_bar
    state.x = state.x - eta * update
    delta = np.zeros(problem.d)
    for i, g in zip(batch, grads):  # sequential so duplicates keep the last write
        delta += g - state.alpha[int(i)]
        state.alpha[int(i)] = g
    state.alpha_bar = state.alpha_bar + delta / problem.n
    return state


def minibatch_sgd_step(
    state: MinibatchState,
    problem: Problem,
    mode: str,
    partition: Partition | None,
    m: int,
    eta: float,
    rng: np.random.Generator | None = None,
    batch: np.ndarray | None = None,
) -> MinibatchState:
    """Minibatch round without variance reduction: x <- x - eta * sum_j grad_{i_j}."""
    if batch is None:
        batch = draw_minibatch(problem, mode, partition, m, rng)
    update = np.zeros(problem.d)
    for i in batch:
        update += grad_component(problem, int(i), state.x)
    state.x = state.x - eta * update
    return state


def minibatch_prop_step_size(problem: Problem, m: int) -> float:
    """The analysis step size 1 / (2 m L_f + 3 L) for minibatch SAGA."""
    return 1.0 / (2.0 * m * problem.L_f + 3.0 * problem.L)


# --- run drivers ---------------------------------------------------------


def run_baseline(
    name: str,
    problem: Problem,
    partition: Partition | None,
    model: DelayModel,
    eta: float,
    stop: StopRule,
    seed: int,
    log_every: str = "iteration",
    mode: str = "distributed",
) -> Trace:
    """Run a named baseline from the zero init under one seeded stream.

    Asynchronous baselines count one delivery per iteration; minibatch
    baselines count one aggregated round (m gradients) per iteration.
    """
    x0 = np.zeros(problem.d)
    _, step_ss = split_seed(seed)
    m = model.m
    if name == "asaga":
        stream = StepStream(step_ss, model, None, "global", n_total=problem.n)
        state = init_asaga(problem, m, x0)
        rec = TraceRecorder(problem, stop, log_every=log_every)
        rec.observe(0, -1, state.x)
        k = 0
        while not rec.done:
            j, i = stream.next()
            asaga_step(state, problem, model, eta, j=j, i=i)
            k += 1
            rec.observe(k, j, state.x)
        return rec.finish(state.x)
    if name == "iag":
        stream = StepStream(step_ss, model, partition, "unused")
        state = init_iag(problem, partition, x0)
        rec = TraceRecorder(problem, stop, log_every=log_every)
        rec.observe(0, -1, state.x)
        k = 0
        while not rec.done:
            j, _ = stream.next()
            iag_step(state, problem, partition, model, eta, j=j)
            k += 1
            rec.observe(k, j, state.x)
        return rec.finish(state.x)
    if name == "async_sgd":
        stream = StepStream(step_ss, model, partition, "cell")
        state = init_sgd(problem, m, x0)
        rec = TraceRecorder(problem, stop, log_every=log_every)
        rec.observe(0, -1, state.x)
        k = 0
        while not rec.done:
            j, i = stream.next()
            async_sgd_step(state, problem, partition, model, eta, j=j, i=i)
            k += 1
            rec.observe(k, j, state.x)
        return rec.finish(state.x)
    if name in ("minibatch_saga", "minibatch_sgd"):
        rng = np.random.default_rng(step_ss)
        state = init_minibatch(problem, x0)
        step = minibatch_saga_step if name == "minibatch_saga" else minibatch_sgd_step
        rec = TraceRecorder(
            problem, stop, log_every=log_every, grads_per_iteration=m
        )
        rec.observe(0, -1, state.x)
        k = 0
        while not rec.done:
            step(state, problem, mode, partition, m, eta, rng=rng)
            k += 1
            rec.observe(k, -1, state.x)
        return rec.finish(state.x)
    raise ValueError(f"unknown baseline {name!r}")
