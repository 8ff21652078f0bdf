"""Flat construction MDP: one bit-flip action per building block plus Stop.

Actions are integers: ``a < total_bits`` flips flat bit ``a`` from 0 to 1,
``a == total_bits`` is Stop.  Stop is masked until the library size reaches
the minimum; flips that would push the size above the maximum are masked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CycleSpec,
    DesignState,
    SizeConstraint,
    cycle_counts,
    feasible_count_triples,
)
from .errors import InvalidTransitionError


@dataclass
class Trajectory:
    """A rollout record usable by both the flat and hierarchical samplers.

    ``obs[t]`` is the policy observation before ``actions[t]``; ``masks[t]``
    the valid-action mask at that point.  The final action is always Stop.
    ``bwd_bits[k]``/``bwd_added[k]`` record the bit state after the k-th block
    addition and which flat bit it set; they drive the backward policy, whose
    choice is always "which selected block to remove".
    """

    obs: np.ndarray  # (T, obs_dim) uint8
    masks: np.ndarray  # (T, n_actions) bool
    actions: np.ndarray  # (T,) int
    terminal_bits: np.ndarray  # (total_bits,) uint8
    bwd_bits: np.ndarray  # (n_blocks_added, total_bits) uint8
    bwd_added: np.ndarray  # (n_blocks_added,) int

    def __len__(self) -> int:
        return len(self.actions)

    def terminal_state(self) -> DesignState:
        return DesignState.from_array(self.terminal_bits)


class FlatEnv:
    """Batched transition/masking logic over flat bit-flip actions."""

    def __init__(self, spec: CycleSpec, constraint: SizeConstraint):
        self.spec = spec
        self.constraint = constraint
        # Raises ConfigError when no terminal state can satisfy the constraint.
        feasible_count_triples(spec, constraint)
        self.total_bits = spec.total_bits
        self.n_actions = self.total_bits + 1
        self.stop_action = self.total_bits
        self.obs_dim = self.total_bits
        self.backward_dim = self.total_bits
        # cycle index of every flat bit
        self.bit_cycle = np.concatenate(
            [np.full(s, i, dtype=np.int64) for i, s in enumerate(spec.cycle_sizes)]
        )
        self._n_cycles = spec.n_cycles

    # batched interface -----------------------------------------------------

    def init_batch(self, n: int) -> dict:
        return {
            "bits": np.zeros((n, self.total_bits), dtype=np.uint8),
            "counts": np.zeros((n, self._n_cycles), dtype=np.int64),
        }

    def observe(self, batch: dict, rows=None) -> np.ndarray:
        bits = batch["bits"] if rows is None else batch["bits"][rows]
        return bits.astype(np.float64)

    def valid_mask_batch(self, bits: np.ndarray, counts: np.ndarray) -> np.ndarray:
        """(B, n_actions) bool mask from bit matrix and per-cycle counts."""
        b = bits.shape[0]
        size = counts.prod(axis=1)
        # product of the other cycles' counts, per cycle (robust to zeros)
        others = np.empty_like(counts)
        for c in range(self._n_cycles):
            others[:, c] = np.prod(np.delete(counts, c, axis=1), axis=1)
        post_flip = (counts + 1) * others  # size after adding one block to cycle c
        mask = np.zeros((b, self.n_actions), dtype=bool)
        flip_ok = post_flip[:, self.bit_cycle] <= self.constraint.max_size
        mask[:, : self.total_bits] = (bits == 0) & flip_ok
        mask[:, self.stop_action] = (size >= self.constraint.min_size) & (
            size <= self.constraint.max_size
        )
        return mask

    def apply_flips(self, batch: dict, rows: np.ndarray, actions: np.ndarray) -> None:
        """Apply flip actions in place for the given rows (no Stop entries)."""
        batch["bits"][rows, actions] = 1
        np.add.at(batch["counts"], (rows, self.bit_cycle[actions]), 1)

    # common rollout protocol shared with HierEnv

    def reset_rows(self, batch: dict, rows: np.ndarray) -> None:
        batch["bits"][rows] = 0
        batch["counts"][rows] = 0

    def masks(self, batch: dict, rows=None) -> np.ndarray:
        bits = batch["bits"] if rows is None else batch["bits"][rows]
        counts = batch["counts"] if rows is None else batch["counts"][rows]
        return self.valid_mask_batch(bits, counts)

    def apply(self, batch: dict, rows: np.ndarray, actions: np.ndarray) -> None:
        self.apply_flips(batch, rows, actions)

    def added_bits(self, batch: dict, rows: np.ndarray, actions: np.ndarray):
        """Which non-Stop actions complete a block addition, and the flat bit set.

        For the flat MDP every non-Stop action adds one block.
        """
        adds = np.ones(len(rows), dtype=bool)
        return adds, actions.astype(np.int64)

    def backward_observe(self, bits: np.ndarray) -> np.ndarray:
        return bits.astype(np.float64)

    def backward_mask(self, bits: np.ndarray) -> np.ndarray:
        """Valid block removals of a state: its set bits."""
        return bits.astype(bool)


# spec-surface single-state operations --------------------------------------


def valid_mask_flat(state: DesignState, spec: CycleSpec, constraint: SizeConstraint) -> np.ndarray:
    """Boolean mask of length total_bits + 1 (last entry: Stop)."""
    env = FlatEnv(spec, constraint)
    bits = state.to_array()[None, :]
    counts = np.array([cycle_counts(state, spec)], dtype=np.int64)
    return env.valid_mask_batch(bits, counts)[0]


def step_flat(
    state: DesignState, action: int, spec: CycleSpec, constraint: SizeConstraint
) -> tuple[DesignState, bool]:
    """Apply an action; returns (next_state, terminal)."""
    mask = valid_mask_flat(state, spec, constraint)
    if not 0 <= action < len(mask) or not mask[action]:
        raise InvalidTransitionError(f"action {action} invalid in this state")
    if action == spec.total_bits:
        return state, True
    return state.with_bit_set(action), False


def parents_flat(state: DesignState) -> list[tuple[DesignState, int]]:
    """(parent, flip-action) pairs: one per set bit.  Empty for the all-zero state."""
    return [
        (state.with_bit_cleared(i), i) for i, v in enumerate(state.bits) if v == 1
    ]
