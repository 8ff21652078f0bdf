"""Library reward over the Cartesian-product library.

The reward of a design x is R(x) = exp(beta * mean of p over L(x)), where p
is a precomputed per-molecule score in [0, 1].  Everything works in log-reward
space (beta * mean); callers exponentiate only where a linear-scale value is
unavoidable, e.g. Metropolis-Hastings acceptance ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CycleSpec, DesignState, decode_selection
from .errors import ConfigError, DimensionError, EmptyLibraryError, InvalidTransitionError

# Above this cell count the accumulator compensates its running sum
# (mean over ~1.58M values must stay stable to 1e-9).
_COMPENSATED_THRESHOLD = 10**6


@dataclass(frozen=True)
class ScoreTable:
    """Dense per-molecule scores indexed by one block per cycle (3 cycles)."""

    values: np.ndarray

    def __init__(self, values: np.ndarray):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"score table must be 3-dimensional, got {arr.ndim}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            bad = int(np.argmax((arr < 0.0) | (arr > 1.0)))
            raise ConfigError(f"score out of [0, 1] at flat index {bad}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def spec(self) -> CycleSpec:
        return CycleSpec(self.dims)

    def check_spec(self, spec: CycleSpec) -> None:
        if tuple(spec.cycle_sizes) != self.dims:
            raise DimensionError(
                f"score table dims {self.dims} do not match cycle sizes {spec.cycle_sizes}"
            )


@dataclass(frozen=True)
class RewardConfig:
    """Reward exponent scale."""

    beta: float = 64.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def mean_score(state: DesignState, table: ScoreTable) -> float:
    """Mean of p over the decoded Cartesian-product library."""
    spec = table.spec()
    sel = decode_selection(state, spec)
    if any(len(s) == 0 for s in sel):
        raise EmptyLibraryError("mean score undefined for an empty library")
    block = table.values[np.ix_(*sel)]
    return float(block.mean())


def log_reward(state: DesignState, table: ScoreTable, cfg: RewardConfig) -> float:
    """beta * mean_score; the linear reward is exp of this."""
    return cfg.beta * mean_score(state, table)


class ScoreAccumulator:
    """Exact incremental sum of p over the current library.

    Mirrors a selection under block additions/removals, updating the running
    sum with the affected Cartesian slice only.  Uses Kahan compensation on
    tables above 10^6 cells.
    """

    def __init__(self, table: ScoreTable, compensated: bool | None = None):
        self.table = table
        self.selected = [np.zeros(n, dtype=bool) for n in table.dims]
        self.counts = [0, 0, 0]
        self.running_sum = 0.0
        self._comp = 0.0
        if compensated is None:
            compensated = table.values.size > _COMPENSATED_THRESHOLD
        self.compensated = compensated

    @classmethod
    def from_state(cls, state: DesignState, table: ScoreTable, **kw) -> "ScoreAccumulator":
        acc = cls(table, **kw)
        spec = table.spec()
        for cycle, sel in enumerate(decode_selection(state, spec)):
            for block in sel:
                acc.add_block(cycle, block)
        return acc

    def _slice_sum(self, cycle: int, block: int) -> float:
        v = self.table.values
        s = self.selected
        if cycle == 0:
            sub = v[block][s[1]][:, s[2]]
        elif cycle == 1:
            sub = v[:, block, :][s[0]][:, s[2]]
        elif cycle == 2:
            sub = v[:, :, block][s[0]][:, s[1]]
        else:
            raise DimensionError(f"cycle {cycle} out of range")
        return float(sub.sum())

    def _accumulate(self, delta: float) -> None:
        if self.compensated:
            y = delta - self._comp
            t = self.running_sum + y
            self._comp = (t - self.running_sum) - y
            self.running_sum = t
        else:
            self.running_sum += delta

    def add_block(self, cycle: int, block: int) -> None:
        if self.selected[cycle][block]:
            raise InvalidTransitionError(f"block {block} already selected in cycle {cycle}")
        self._accumulate(self._slice_sum(cycle, block))
        self.selected[cycle][block] = True
        self.counts[cycle] += 1

    def remove_block(self, cycle: int, block: int) -> None:
        if not self.selected[cycle][block]:
            raise InvalidTransitionError(f"block {block} not selected in cycle {cycle}")
        self.selected[cycle][block] = False
        self.counts[cycle] -= 1
        self._accumulate(-self._slice_sum(cycle, block))

    def delta_add_block(self, cycle: int, block: int) -> float:
        """Sum increase that :meth:`add_block` would apply, without applying it."""
        if self.selected[cycle][block]:
            raise InvalidTransitionError(f"block {block} already selected in cycle {cycle}")
        return self._slice_sum(cycle, block)

    def delta_remove_block(self, cycle: int, block: int) -> float:
        if not self.selected[cycle][block]:
            raise InvalidTransitionError(f"block {block} not selected in cycle {cycle}")
        self.selected[cycle][block] = False
        try:
            delta = -self._slice_sum(cycle, block)
        finally:
            self.selected[cycle][block] = True
        return delta

    @property
    def library_size(self) -> int:
        return self.counts[0] * self.counts[1] * self.counts[2]

    def mean(self) -> float:
        n = self.library_size
        if n == 0:
            raise EmptyLibraryError("mean score undefined for an empty library")
        return self.running_sum / n


def delta_add_block(acc: ScoreAccumulator, table: ScoreTable, cycle: int, block: int) -> ScoreAccumulator:
    """Functional form: return a copy of ``acc`` with ``block`` added."""
    if acc.table is not table:
        raise DimensionError("accumulator was built over a different table")
    out = ScoreAccumulator(table, compensated=acc.compensated)
    out.selected = [s.copy() for s in acc.selected]
    out.counts = list(acc.counts)
    out.running_sum = acc.running_sum
    out._comp = acc._comp
    out.add_block(cycle, block)
    return out
