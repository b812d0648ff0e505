"""Finite-sum least-squares problems with exact oracles and constants.

A problem is the finite sum f(x) = (1/n) sum_i f_i(x) with
f_i(x) = 0.5 * (a_i^T x - b_i)^2, so f(x) = |Ax - b|^2 / (2n).  The
minimizer, the smoothness/strong-convexity constants and the gradient
variance at the minimizer are all computed exactly at construction time
from the dense Gram spectrum, which is the point of keeping everything
at desk scale.

Components may be *blocks* of consecutive raw rows (see :func:`block`):
component i is then the sum of the member f_i's, its gradient oracle sums
the member gradients, and all constants (L, L_f, mu, sigma_sq) describe
the blocked finite sum.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MAGIC = b"AVRP"
FORMAT_VERSION = 1

# Gram matrices this close to singular are rejected as degenerate.
DEGENERACY_RATIO = 1e-12


class DegenerateProblemError(ValueError):
    """The Gram matrix is numerically singular; reseed and regenerate."""


@dataclass(frozen=True)
class Problem:
    """An immutable least-squares finite-sum instance.

    ``rows``/``targets`` hold the raw data; ``block_size`` groups
    consecutive raw rows into components.  ``n`` is the *component*
    count (``rows.shape[0] // block_size``).
    """

    rows: np.ndarray        # (raw_n, d)
    targets: np.ndarray     # (raw_n,)
    x_star: np.ndarray      # (d,)
    L: float                # max component smoothness
    L_f: float              # objective smoothness
    mu: float               # objective strong convexity
    sigma_sq: float         # (1/n) sum_i |grad f_i(x_star)|^2
    sigma: float            # noise scale used at generation
    seed: int
    block_size: int = 1

    @property
    def raw_n(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[0] // self.block_size

    @property
    def d(self) -> int:
        return self.rows.shape[1]


def generate_least_squares(n: int, d: int, sigma: float, seed: int) -> Problem:
    """Generate a random least-squares instance.

    Rows are i.i.d. N(0, I_d / d), the planted solution is N(0, I_d),
    and targets are b = A x + z with z ~ N(0, sigma^2 I_n).  The
    generator is NumPy's default PCG64 seeded with ``seed``, consuming,
    in order: rows, planted x, noise (noise is drawn even when sigma=0
    so the stream does not depend on sigma).

    Raises :class:`DegenerateProblemError` if the Gram matrix is
    numerically singular (mu < 1e-12 * L_f).
    """
    if not (n >= d >= 1):
        raise ValueError(f"need n >= d >= 1, got n={n}, d={d}")
    if sigma < 0:
        raise ValueError(f"noise scale must be nonnegative, got {sigma}")
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, d)) / np.sqrt(d)
    x_true = rng.standard_normal(d)
    noise = sigma * rng.standard_normal(n)
    targets = rows @ x_true + noise
    return problem_from_arrays(rows, targets, sigma=sigma, seed=seed)


def problem_from_arrays(
    rows: np.ndarray, targets: np.ndarray, sigma: float = 0.0, seed: int = 0
) -> Problem:
    """Build a Problem from explicit data, solving the normal equations.

    Shares the validation path with :func:`generate_least_squares` and
    :func:`load`; rejects numerically singular Gram matrices.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    n, d = rows.shape
    gram = rows.T @ rows
    eigvals = np.linalg.eigvalsh(gram)
    L_f = float(eigvals[-1]) / n
    mu = float(eigvals[0]) / n
    if mu < DEGENERACY_RATIO * L_f:
        raise DegenerateProblemError(
            f"Gram matrix numerically singular: mu={mu:.3e}, L_f={L_f:.3e}"
        )
    x_star = np.linalg.solve(gram, rows.T @ targets)
    L = float(np.max(np.sum(rows * rows, axis=1)))
    residuals = rows @ x_star - targets
    sigma_sq = float(np.mean(residuals**2 * np.sum(rows * rows, axis=1)))
    return Problem(
        rows=rows,
        targets=targets,
        x_star=x_star,
        L=L,
        L_f=L_f,
        mu=mu,
        sigma_sq=sigma_sq,
        sigma=float(sigma),
        seed=int(seed),
    )


def grad_component(p: Problem, i: int, x: np.ndarray) -> np.ndarray:
    """Gradient of component i at x.

    For block_size 1 this is (a_i^T x - b_i) a_i; for blocked problems
    it sums the member-row gradients.
    """
    if not 0 <= i < p.n:
        raise IndexError(f"component index {i} out of range [0, {p.n})")
    if p.block_size == 1:
        a = p.rows[i]
        return (a @ x - p.targets[i]) * a
    lo = i * p.block_size
    hi = lo + p.block_size
    sub = p.rows[lo:hi]
    err = sub @ x - p.targets[lo:hi]
    return err @ sub


def grad_full(p: Problem, x: np.ndarray) -> np.ndarray:
    """Gradient of f(x) = (1/n) sum_i f_i(x)."""
    err = p.rows @ x - p.targets
    return (err @ p.rows) / p.n


def objective(p: Problem, x: np.ndarray) -> float:
    err = p.rows @ x - p.targets
    return 0.5 * float(err @ err) / p.n


def objective_gap(p: Problem, x: np.ndarray) -> float:
    """f(x) - f(x_star); nonnegative up to rounding."""
    return objective(p, x) - objective(p, p.x_star)


def grads_at_minimizer(p: Problem) -> np.ndarray:
    """All component gradients at x_star, as an (n, d) array."""
    err = p.rows @ p.x_star - p.targets
    raw = err[:, None] * p.rows
    if p.block_size == 1:
        return raw
    return raw.reshape(p.n, p.block_size, p.d).sum(axis=1)


def block(p: Problem, b: int) -> Problem:
    """Group consecutive components into blocks of size b.

    The new problem has n/b components, component i being the *sum* of
    f over block i, so one communication round amortizes b gradient
    computations.  Constants are recomputed for the blocked finite sum
    (whose objective is b times the unblocked one; the minimizer is
    unchanged).
    """
    if p.block_size != 1:
        raise ValueError("problem is already blocked")
    if b < 1 or p.n % b != 0:
        raise ValueError(f"block size {b} must divide n={p.n}")
    if b == 1:
        return p
    n_blocked = p.n // b
    # Per-component smoothness of a block is lambda_max of its Hessian
    # sum_{i in block} a_i a_i^T.
    L = 0.0
    for ell in range(n_blocked):
        sub = p.rows[ell * b : (ell + 1) * b]
        if b <= p.d:
            s = np.linalg.svd(sub, compute_uv=False)
            lam = float(s[0] ** 2)
        else:
            lam = float(np.linalg.eigvalsh(sub.T @ sub)[-1])
        L = max(L, lam)
    gram = p.rows.T @ p.rows
    eigvals = np.linalg.eigvalsh(gram)
    L_f = float(eigvals[-1]) / n_blocked
    mu = float(eigvals[0]) / n_blocked
    residuals = p.rows @ p.x_star - p.targets
    raw = residuals[:, None] * p.rows
    g_star = raw.reshape(n_blocked, b, p.d).sum(axis=1)
    sigma_sq = float(np.mean(np.sum(g_star**2, axis=1)))
    return replace(
        p, L=L, L_f=L_f, mu=mu, sigma_sq=sigma_sq, block_size=b
    )


@dataclass(frozen=True)
class Partition:
    """Disjoint equal-size assignment of components to machines."""

    assignments: tuple[np.ndarray, ...]  # m sorted index arrays
    machine_of: np.ndarray               # (n,) component -> machine

    @property
    def m(self) -> int:
        return len(self.assignments)

    @property
    def per_machine(self) -> int:
        return len(self.assignments[0])


def partition(n: int, m: int, seed: int) -> Partition:
    """Random equal-size partition of [n] into m machines.

    m must divide n; use :func:`block` first if it does not.
    """
    if m < 1 or n % m != 0:
        raise ValueError(f"machine count {m} must divide n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    size = n // m
    assignments = tuple(
        np.sort(perm[j * size : (j + 1) * size]) for j in range(m)
    )
    machine_of = np.empty(n, dtype=np.int64)
    for j, idx in enumerate(assignments):
        machine_of[idx] = j
    return Partition(assignments=assignments, machine_of=machine_of)


# --- serialization -----------------------------------------------------

_HEADER = struct.Struct("<4sIQQdQ")


def save(p: Problem, path: str | Path) -> None:
    """Write the flat binary format plus a JSON metadata sidecar.

    Layout: header (magic, version u32, n u64, d u64, sigma f64,
    seed u64) then row-major float64 rows, targets, x_star, and the four
    scalar constants L, L_f, mu, sigma_sq.  Only unblocked problems are
    serialized; block size is a run-config concern.
    """
    if p.block_size != 1:
        raise ValueError("only unblocked problems are serialized")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, p.n, p.d, p.sigma, p.seed))
        fh.write(np.ascontiguousarray(p.rows, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(p.targets, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(p.x_star, dtype="<f8").tobytes())
        fh.write(np.array([p.L, p.L_f, p.mu, p.sigma_sq], dtype="<f8").tobytes())
    sidecar = {
        "n": p.n,
        "d": p.d,
        "L": p.L,
        "L_f": p.L_f,
        "mu": p.mu,
        "sigma_sq": p.sigma_sq,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(path: str | Path) -> Problem:
    """Read a problem written by :func:`save`."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError("truncated problem file")
        magic, version, n, d, sigma, seed = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported version {version}")
        body = np.frombuffer(fh.read(), dtype="<f8")
    expected = n * d + n + d + 4
    if body.size != expected:
        raise ValueError(f"expected {expected} floats, found {body.size}")
    rows = body[: n * d].reshape(n, d).copy()
    targets = body[n * d : n * d + n].copy()
    x_star = body[n * d + n : n * d + n + d].copy()
    L, L_f, mu, sigma_sq = body[-4:]
    return Problem(
        rows=rows,
        targets=targets,
        x_star=x_star,
        L=float(L),
        L_f=float(L_f),
        mu=float(mu),
        sigma_sq=float(sigma_sq),
        sigma=float(sigma),
        seed=int(seed),
    )
