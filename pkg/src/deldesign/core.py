"""Domain types and the library algebra.

A candidate library is encoded as a flat binary vector over all building
blocks, partitioned into consecutive synthesis cycles.  The library a vector
encodes is the Cartesian product of the per-cycle selected block sets, so its
size is the product of the per-cycle selection counts.

Bit layout: the flat index of block ``j`` in cycle ``i`` is ``offset(i) + j``
with ``offset(i) = sum(cycle_sizes[:i])``.  Block indices in all external
formats are cycle-local.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class CycleSpec:
    """Number of available building blocks per synthesis cycle."""

    cycle_sizes: tuple[int, ...]

    def __init__(self, cycle_sizes: Iterable[int]):
        sizes = tuple(int(s) for s in cycle_sizes)
        if len(sizes) < 2:
            raise ConfigError(f"need at least 2 cycles, got {len(sizes)}")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"every cycle size must be >= 1, got {sizes}")
        object.__setattr__(self, "cycle_sizes", sizes)

    @property
    def n_cycles(self) -> int:
        return len(self.cycle_sizes)

    @property
    def total_bits(self) -> int:
        return sum(self.cycle_sizes)

    def offset(self, cycle: int) -> int:
        """Flat bit offset of the first block of ``cycle``."""
        return sum(self.cycle_sizes[:cycle])

    def cycle_of_bit(self, bit: int) -> int:
        """Cycle that flat bit index ``bit`` belongs to."""
        if not 0 <= bit < self.total_bits:
            raise DimensionError(f"bit {bit} out of range for {self.total_bits} bits")
        acc = 0
        for i, s in enumerate(self.cycle_sizes):
            acc += s
            if bit < acc:
                return i
        raise AssertionError("unreachable")

    def slices(self) -> list[slice]:
        """Per-cycle slices into the flat bit vector."""
        out, start = [], 0
        for s in self.cycle_sizes:
            out.append(slice(start, start + s))
            start += s
        return out


@dataclass(frozen=True)
class DesignState:
    """An immutable binary selection vector over all building blocks."""

    bits: tuple[int, ...]

    def __init__(self, bits: Iterable[int]):
        b = tuple(int(v) for v in bits)
        if any(v not in (0, 1) for v in b):
            raise DimensionError("bits must be 0/1")
        object.__setattr__(self, "bits", b)

    @classmethod
    def zeros(cls, spec: CycleSpec) -> "DesignState":
        return cls((0,) * spec.total_bits)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DesignState":
        return cls(np.asarray(arr).astype(int).tolist())

    def to_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.bits)

    def with_bit_set(self, bit: int) -> "DesignState":
        if self.bits[bit] == 1:
            raise DimensionError(f"bit {bit} already set")
        b = list(self.bits)
        b[bit] = 1
        return DesignState(b)

    def with_bit_cleared(self, bit: int) -> "DesignState":
        if self.bits[bit] == 0:
            raise DimensionError(f"bit {bit} already clear")
        b = list(self.bits)
        b[bit] = 0
        return DesignState(b)


@dataclass(frozen=True)
class SizeConstraint:
    """Inclusive bounds on the molecule count of a terminal library."""

    min_size: int
    max_size: int

    def __post_init__(self):
        if not (1 <= self.min_size <= self.max_size):
            raise ConfigError(
                f"need 1 <= min_size <= max_size, got [{self.min_size}, {self.max_size}]"
            )

    def contains(self, size: int) -> bool:
        return self.min_size <= size <= self.max_size


@dataclass
class SampleEntry:
    state: DesignState
    log_reward: float
    mean_score: float


@dataclass
class SampleSet:
    """Terminal designs with their log-rewards, the unit of evaluation."""

    entries: list[SampleEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def states(self) -> list[DesignState]:
        return [e.state for e in self.entries]

    def mean_scores(self) -> np.ndarray:
        return np.array([e.mean_score for e in self.entries], dtype=float)

    def log_rewards(self) -> np.ndarray:
        return np.array([e.log_reward for e in self.entries], dtype=float)


def _check_length(state: DesignState, spec: CycleSpec) -> None:
    if len(state) != spec.total_bits:
        raise DimensionError(
            f"state has {len(state)} bits, spec expects {spec.total_bits}"
        )


def decode_selection(state: DesignState, spec: CycleSpec) -> list[list[int]]:
    """Per-cycle sorted lists of the cycle-local indices of selected blocks."""
    _check_length(state, spec)
    out = []
    for sl in spec.slices():
        out.append([j for j, v in enumerate(state.bits[sl]) if v == 1])
    return out


def encode_selection(selections: Sequence[Sequence[int]], spec: CycleSpec) -> DesignState:
    """Inverse of :func:`decode_selection`."""
    if len(selections) != spec.n_cycles:
        raise DimensionError(
            f"got {len(selections)} cycles of selections, spec has {spec.n_cycles}"
        )
    bits = [0] * spec.total_bits
    for i, sel in enumerate(selections):
        off, size = spec.offset(i), spec.cycle_sizes[i]
        for j in sel:
            if not 0 <= j < size:
                raise DimensionError(f"block {j} out of range for cycle {i} (size {size})")
            bits[off + j] = 1
    return DesignState(bits)


def cycle_counts(state: DesignState, spec: CycleSpec) -> list[int]:
    """Number of selected blocks per cycle."""
    _check_length(state, spec)
    return [sum(state.bits[sl]) for sl in spec.slices()]


def library_size(state: DesignState, spec: CycleSpec) -> int:
    """Molecule count of the encoded library (product of per-cycle counts)."""
    return math.prod(cycle_counts(state, spec))


def feasible_count_triples(spec: CycleSpec, constraint: SizeConstraint) -> list[tuple[int, ...]]:
    """All per-cycle selection-count tuples whose product lies in the constraint.

    Raises ConfigError when the constraint is unsatisfiable for the spec.
    """
    ranges = [np.arange(s + 1) for s in spec.cycle_sizes]
    grids = np.meshgrid(*ranges, indexing="ij")
    prod = np.ones_like(grids[0], dtype=np.int64)
    for g in grids:
        prod = prod * g
    ok = (prod >= constraint.min_size) & (prod <= constraint.max_size)
    idx = np.argwhere(ok)
    if len(idx) == 0:
        raise ConfigError(
            f"no selection-count combination of {spec.cycle_sizes} yields a library "
            f"size in [{constraint.min_size}, {constraint.max_size}]"
        )
    return [tuple(int(v) for v in row) for row in idx]


def enumerate_feasible_states(spec: CycleSpec, constraint: SizeConstraint) -> list[DesignState]:
    """All terminal states satisfying the constraint.  Tiny specs only."""
    if spec.total_bits > 20:
        raise ConfigError("exhaustive enumeration limited to specs with <= 20 bits")
    out = []
    for bits in itertools.product((0, 1), repeat=spec.total_bits):
        s = DesignState(bits)
        if constraint.contains(library_size(s, spec)):
            out.append(s)
    return out
