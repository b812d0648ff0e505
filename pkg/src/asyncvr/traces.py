"""Run traces: per-iteration metrics, stop rules, and CSV/JSONL output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problems import Problem, objective_gap

METRICS = ("dist_sq", "gap")


@dataclass(frozen=True)
class StopRule:
    """Stop when the metric drops to the threshold or the budget runs out."""

    threshold: float
    max_iterations: int
    metric: str = "dist_sq"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass
class Trace:
    """Logged metrics of one run plus its outcome."""

    iterations: np.ndarray  # int64
    machines: np.ndarray    # int64, -1 for aggregated steps
    dist_sq: np.ndarray
    gap: np.ndarray
    converged: bool
    iterations_run: int
    first_hit: int | None   # first iteration at/below threshold, if any
    final_dist_sq: float
    final_gap: float
    log_every: str = "iteration"
    meta: dict = field(default_factory=dict)

    def metric_column(self, metric: str) -> np.ndarray:
        if metric == "dist_sq":
            return self.dist_sq
        if metric == "gap":
            return self.gap
        raise ValueError(f"metric must be one of {METRICS}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,machine,dist_sq,gap\n")
            for k, j, ds, gp in zip(
                self.iterations, self.machines, self.dist_sq, self.gap
            ):
                fh.write(f"{int(k)},{int(j)},{ds:.17g},{gp:.17g}\n")

    def epoch_summaries_jsonl(self, path: str | Path, epoch_len: int) -> None:
        """Every logged row falling on an epoch boundary, as JSONL."""
        with open(path, "w") as fh:
            for k, ds, gp in zip(self.iterations, self.dist_sq, self.gap):
                if k % epoch_len == 0:
                    rec = {
                        "epoch": int(k) // epoch_len,
                        "iteration": int(k),
                        "dist_sq": float(ds),
                        "gap": float(gp),
                    }
                    fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def from_csv(path: str | Path) -> "Trace":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        its = data["iteration"].astype(np.int64)
        return Trace(
            iterations=its,
            machines=data["machine"].astype(np.int64),
            dist_sq=np.asarray(data["dist_sq"], dtype=np.float64),
            gap=np.asarray(data["gap"], dtype=np.float64),
            converged=False,
            iterations_run=int(its[-1]) if its.size else 0,
            first_hit=None,
            final_dist_sq=float(data["dist_sq"][-1]),
            final_gap=float(data["gap"][-1]),
        )


class TraceRecorder:
    """Streams metric observations, applies the stop rule, builds the Trace.

    The stop metric is checked at every observation; ``log_every`` only
    controls which rows are kept ("iteration" or "epoch", one epoch being
    n component-gradient computations).
    """

    def __init__(
        self,
        problem: Problem,
        stop: StopRule,
        log_every: str = "iteration",
        grads_per_iteration: int = 1,
    ):
        if log_every not in ("iteration", "epoch"):
            raise ValueError("log_every must be 'iteration' or 'epoch'")
        self._problem = problem
        self._stop = stop
        self._log_every = log_every
        self._epoch_len = max(1, problem.n // grads_per_iteration)
        self._rows: list[tuple[int, int, float, float]] = []
        self._last: tuple[float, float] = (np.nan, np.nan)
        self.first_hit: int | None = None
        self.iterations_run = 0
        self.done = stop.max_iterations == 0
        self.diverged = False

    def observe(self, iteration: int, machine: int, x: np.ndarray) -> None:
        diff = x - self._problem.x_star
        dist_sq = float(diff @ diff)
        gap = objective_gap(self._problem, x)
        self._last = (dist_sq, gap)
        self.iterations_run = iteration
        if self._log_every == "iteration" or iteration % self._epoch_len == 0:
            self._rows.append((iteration, machine, dist_sq, gap))
        value = dist_sq if self._stop.metric == "dist_sq" else gap
        if not np.isfinite(value):
            self.diverged = True
            self.done = True
            return
        if self.first_hit is None and value <= self._stop.threshold:
            self.first_hit = iteration
            self.done = True
        if iteration >= self._stop.max_iterations:
            self.done = True

    def finish(self, x_final: np.ndarray) -> Trace:
        rows = np.array(self._rows, dtype=np.float64).reshape(-1, 4)
        return Trace(
            iterations=rows[:, 0].astype(np.int64),
            machines=rows[:, 1].astype(np.int64),
            dist_sq=rows[:, 2],
            gap=rows[:, 3],
            converged=self.first_hit is not None,
            iterations_run=self.iterations_run,
            first_hit=self.first_hit,
            final_dist_sq=self._last[0],
            final_gap=self._last[1],
        )
