"""Seeded randomness for simulation runs.

One root seed drives a whole run.  The root SeedSequence is split into
two children: the *init* stream (initial per-machine function indices)
and the *step* stream (the per-iteration machine and function draws).
The step stream pre-draws uniforms in fixed-size blocks -- two blocks of
``block`` doubles per refill, machine uniforms first, then function
uniforms -- so that scalar and vectorized simulators consume the
generator identically and replay bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .delays import DelayModel, machines_from_uniforms
from .problems import Partition

STREAM_BLOCK = 4096

#: How the per-step function uniform is interpreted.
#: "cell": uniform over the selected machine's partition cell.
#: "global": uniform over all n components (shared-data algorithms).
#: "unused": drawn for stream alignment but ignored (cyclic selection).
FUNCTION_MODES = ("cell", "global", "unused")


def split_seed(seed: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Root seed -> (init stream, step stream) seed sequences."""
    init_ss, step_ss = np.random.SeedSequence(seed).spawn(2)
    return init_ss, step_ss


def initial_indices(
    partition: Partition, init_ss: np.random.SeedSequence
) -> np.ndarray:
    """Initial i_j draws, one uniform position per machine in one call."""
    gen = np.random.default_rng(init_ss)
    positions = gen.integers(0, partition.per_machine, size=partition.m)
    return np.array(
        [partition.assignments[j][positions[j]] for j in range(partition.m)],
        dtype=np.int64,
    )


class StepStream:
    """Pre-drawn (machine, function) pairs for one simulation run."""

    def __init__(
        self,
        step_ss: np.random.SeedSequence,
        model: DelayModel,
        partition: Partition | None,
        function_mode: str = "cell",
        n_total: int | None = None,
        block: int = STREAM_BLOCK,
    ):
        if function_mode not in FUNCTION_MODES:
            raise ValueError(f"function_mode must be one of {FUNCTION_MODES}")
        if function_mode == "cell" and partition is None:
            raise ValueError("cell mode needs a partition")
        if function_mode == "global" and n_total is None:
            raise ValueError("global mode needs the component count")
        self._gen = np.random.default_rng(step_ss)
        self._model = model
        self._partition = partition
        self._mode = function_mode
        self._n_total = n_total
        self._block = block
        self._pos = block  # trigger refill on first use
        self._js = np.empty(0, dtype=np.int64)
        self._is = np.empty(0, dtype=np.int64)
        if partition is not None:
            self._cells = np.stack(partition.assignments)  # (m, n/m), rows sorted
        else:
            self._cells = None

    def _refill(self) -> None:
        u_machines = self._gen.random(self._block)
        u_functions = self._gen.random(self._block)
        js = machines_from_uniforms(self._model, u_machines)
        self._js = js
        if self._mode == "cell":
            size = self._partition.per_machine
            positions = np.minimum((u_functions * size).astype(np.int64), size - 1)
            self._is = self._cells[js, positions]
        elif self._mode == "global":
            n = self._n_total
            self._is = np.minimum((u_functions * n).astype(np.int64), n - 1)
        else:
            self._is = np.full(self._block, -1, dtype=np.int64)
        self._pos = 0

    def next(self) -> tuple[int, int]:
        if self._pos >= self._block:
            self._refill()
        j = int(self._js[self._pos])
        i = int(self._is[self._pos])
        self._pos += 1
        return j, i

    def next_block(self) -> tuple[np.ndarray, np.ndarray]:
        """The next full block of draws (vectorized consumers)."""
        if 0 < self._pos < self._block:
            raise RuntimeError("cannot mix partial scalar reads with block reads")
        self._refill()
        self._pos = self._block
        return self._js, self._is
