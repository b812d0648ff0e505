"""Stochastic delay model: machine selection probabilities and clocks.

The discrete model selects machine j with probability p_j at every step,
independently.  It is equivalent (in distribution of the machine-identity
sequence) to a continuous-time model where machine j finishes work after
Exponential(lambda_j) time, by memorylessness; :func:`continuous_schedule`
realizes the continuous view for wallclock-proxy reporting and for the
equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class DelayModel:
    """Selection distribution over m machines; all p_j strictly positive."""

    p: np.ndarray
    p_min: float = field(init=False)
    p_max: float = field(init=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.ascontiguousarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("p must be a nonempty vector")
        if np.any(p <= 0):
            raise ValueError("all selection probabilities must be positive")
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_min", float(p.min()))
        object.__setattr__(self, "p_max", float(p.max()))
        object.__setattr__(self, "_cum", np.cumsum(p))

    @property
    def m(self) -> int:
        return self.p.size

    @property
    def ratio(self) -> np.ndarray:
        """Per-machine step-size ratios p_min / p_j."""
        return self.p_min / self.p


@dataclass(frozen=True)
class EventSchedule:
    """Time-sorted (time, machine) completion events over a horizon."""

    times: np.ndarray
    machines: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.machines.shape:
            raise ValueError("times and machines must have equal length")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size


def uniform(m: int) -> DelayModel:
    """All machines equally likely."""
    if m < 1:
        raise ValueError("need at least one machine")
    return DelayModel(p=np.full(m, 1.0 / m))


def from_rates(rates) -> DelayModel:
    """Selection probabilities p_j = lambda_j / sum(lambda) from clock rates."""
    lam = np.ascontiguousarray(rates, dtype=np.float64)
    if lam.ndim != 1 or lam.size < 1:
        raise ValueError("rates must be a nonempty vector")
    if np.any(lam <= 0):
        raise ValueError("all rates must be positive")
    return DelayModel(p=lam / lam.sum())


def sample_machine(model: DelayModel, rng: np.random.Generator) -> int:
    """Draw one machine index by inverse CDF.

    Tie-break is fixed: the first index whose cumulative probability
    exceeds the uniform draw.
    """
    u = rng.random()
    j = int(np.searchsorted(model._cum, u, side="right"))
    return min(j, model.m - 1)


def machines_from_uniforms(model: DelayModel, us: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF mapping of uniforms to machine indices."""
    js = np.searchsorted(model._cum, us, side="right")
    return np.minimum(js, model.m - 1)


def continuous_schedule(
    rates, horizon: float, rng: np.random.Generator
) -> EventSchedule:
    """Merged completion events of independent exponential clocks.

    Machine j emits events at i.i.d. Exponential(lambda_j) inter-arrival
    times; events across machines are merged and time-sorted.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    lam = np.ascontiguousarray(rates, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("all rates must be positive")
    all_times = []
    all_machines = []
    for j, rate in enumerate(lam):
        ts = []
        t = 0.0
        # Draw in chunks sized to the expected count to limit generator calls.
        chunk = max(16, int(rate * horizon * 1.1) + 16)
        while True:
            gaps = rng.exponential(1.0 / rate, size=chunk)
            cum = t + np.cumsum(gaps)
            inside = cum[cum <= horizon]
            ts.append(inside)
            if inside.size < chunk:
                break
            t = float(cum[-1])
        ts = np.concatenate(ts)
        all_times.append(ts)
        all_machines.append(np.full(ts.size, j, dtype=np.int64))
    times = np.concatenate(all_times)
    machines = np.concatenate(all_machines)
    order = np.argsort(times, kind="stable")
    return EventSchedule(times=times[order], machines=machines[order])


def estimate_rates(counts) -> DelayModel:
    """Estimated selection probabilities from per-machine update counts."""
    c = np.ascontiguousarray(counts, dtype=np.float64)
    if np.any(c < 1):
        raise ValueError("every machine needs at least one observed update")
    return DelayModel(p=c / c.sum())
