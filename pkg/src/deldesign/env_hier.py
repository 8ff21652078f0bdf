"""Hierarchical construction MDP: cycle -> cluster -> block micro-steps.

Building blocks are grouped per cycle into structural clusters (agglomerative
clustering with Jaccard distance over binary fingerprints).  Selecting one
block becomes three micro-choices; Stop is available only at the
cycle-choice phase, so terminal states always have completed micro-triples.

The policy operates on a single fixed-width action head laid out as
``[Stop | cycles | clusters | cycle-local blocks]``; per-phase masks expose
only the relevant segment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CycleSpec, DesignState, SizeConstraint, cycle_counts, feasible_count_triples
from .errors import ConfigError, DimensionError, InvalidTransitionError


class Phase(enum.IntEnum):
    CHOOSE_CYCLE = 0
    CHOOSE_CLUSTER = 1
    CHOOSE_BLOCK = 2


@dataclass(frozen=True)
class ClusterMap:
    """Per-cycle assignment of blocks to dense cluster ids."""

    labels: tuple[tuple[int, ...], ...]  # labels[cycle][block] -> cluster id

    def __init__(self, labels: Sequence[Sequence[int]]):
        labs = tuple(tuple(int(v) for v in cyc) for cyc in labels)
        for i, cyc in enumerate(labs):
            ids = sorted(set(cyc))
            if ids != list(range(len(ids))):
                raise ConfigError(f"cycle {i} cluster ids are not dense 0..k-1: {ids}")
        object.__setattr__(self, "labels", labs)

    @property
    def n_clusters(self) -> tuple[int, ...]:
        return tuple(max(cyc) + 1 for cyc in self.labels)

    def blocks_in(self, cycle: int, cluster: int) -> list[int]:
        return [j for j, g in enumerate(self.labels[cycle]) if g == cluster]

    def check_spec(self, spec: CycleSpec) -> None:
        sizes = tuple(len(cyc) for cyc in self.labels)
        if sizes != tuple(spec.cycle_sizes):
            raise DimensionError(
                f"cluster map covers {sizes} blocks, spec has {spec.cycle_sizes}"
            )

    @classmethod
    def singletons(cls, spec: CycleSpec) -> "ClusterMap":
        return cls([list(range(s)) for s in spec.cycle_sizes])


def jaccard_distance_matrix(fps: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard distances of binary row vectors.

    Two all-zero vectors are at distance 0 (identical-empty).
    """
    f = np.asarray(fps, dtype=np.int64)
    inter = f @ f.T
    pop = f.sum(axis=1)
    union = pop[:, None] + pop[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    d[union == 0] = 0.0
    np.fill_diagonal(d, 0.0)
    return d


def _agglomerate(dist: np.ndarray, n_clusters: int) -> np.ndarray:
    """Average-linkage agglomeration down to ``n_clusters`` labels.

    Deterministic: among equal-distance pairs the lexicographically smallest
    (min id, max id) pair merges first; a merged cluster keeps the smaller id.
    """
    n = dist.shape[0]
    d = dist.astype(np.float64).copy()
    sizes = np.ones(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    parent = np.arange(n)
    # only the upper triangle is consulted; argmin's row-major first-occurrence
    # rule implements the (min id, max id) tie-break
    work = np.full((n, n), np.inf)
    iu = np.triu_indices(n, k=1)
    work[iu] = d[iu]
    n_alive = n
    while n_alive > n_clusters:
        flat = int(np.argmin(work))
        a, b = divmod(flat, n)
        # average-linkage update against every other live cluster
        for k in np.nonzero(alive)[0]:
            if k == a or k == b:
                continue
            dk = (sizes[a] * d[min(a, k), max(a, k)] + sizes[b] * d[min(b, k), max(b, k)]) / (
                sizes[a] + sizes[b]
            )
            d[min(a, k), max(a, k)] = dk
            work[min(a, k), max(a, k)] = dk
        sizes[a] += sizes[b]
        alive[b] = False
        parent[b] = a
        work[b, :] = np.inf
        work[:, b] = np.inf
        n_alive -= 1
    # resolve representatives, then densify in order of smallest member index
    reps = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = i
        while parent[r] != r:
            r = parent[r]
        reps[i] = r
    order = {r: k for k, r in enumerate(sorted(set(reps.tolist())))}
    return np.array([order[r] for r in reps], dtype=np.int64)


def cluster_blocks(fps: Sequence[np.ndarray], n_clusters: Sequence[int]) -> ClusterMap:
    """Cluster each cycle's fingerprints into the requested number of groups."""
    if len(fps) != len(n_clusters):
        raise DimensionError("one cluster count per cycle required")
    labels = []
    for cycle, (f, k) in enumerate(zip(fps, n_clusters)):
        f = np.asarray(f)
        if f.ndim != 2:
            raise DimensionError(f"cycle {cycle} fingerprints must be 2-d")
        if k > f.shape[0]:
            raise ConfigError(
                f"cycle {cycle}: {k} clusters requested for {f.shape[0]} blocks"
            )
        labels.append(_agglomerate(jaccard_distance_matrix(f), k).tolist())
    return ClusterMap(labels)


@dataclass(frozen=True)
class HierState:
    bits: DesignState
    phase: Phase = Phase.CHOOSE_CYCLE
    chosen_cycle: int | None = None
    chosen_cluster: int | None = None

    def __post_init__(self):
        if (self.chosen_cycle is None) != (self.phase == Phase.CHOOSE_CYCLE):
            raise DimensionError("chosen_cycle present iff past the cycle phase")
        if (self.chosen_cluster is None) != (self.phase != Phase.CHOOSE_BLOCK):
            raise DimensionError("chosen_cluster present iff at the block phase")


class HierEnv:
    """Batched transition/masking logic over the hierarchical micro-steps."""

    def __init__(self, spec: CycleSpec, constraint: SizeConstraint, cmap: ClusterMap):
        cmap.check_spec(spec)
        feasible_count_triples(spec, constraint)
        self.spec = spec
        self.constraint = constraint
        self.cmap = cmap
        self.total_bits = spec.total_bits
        self.n_cycles = spec.n_cycles
        self.max_clusters = max(cmap.n_clusters)
        self.max_blocks = max(spec.cycle_sizes)
        # unified head layout: [stop | cycles | clusters | blocks]
        self.stop_action = 0
        self.cycle_base = 1
        self.cluster_base = 1 + self.n_cycles
        self.block_base = self.cluster_base + self.max_clusters
        self.n_actions = self.block_base + self.max_blocks
        self.obs_dim = self.total_bits + self.n_cycles + self.max_clusters + 2
        self.backward_dim = self.total_bits
        self.bit_cycle = np.concatenate(
            [np.full(s, i, dtype=np.int64) for i, s in enumerate(spec.cycle_sizes)]
        )
        # membership[cycle]: (n_clusters, cycle_size) bool
        self.membership = []
        for c in range(self.n_cycles):
            lab = np.array(cmap.labels[c])
            m = np.zeros((cmap.n_clusters[c], spec.cycle_sizes[c]), dtype=bool)
            m[lab, np.arange(len(lab))] = True
            self.membership.append(m)
        self.offsets = [spec.offset(c) for c in range(self.n_cycles)]

    # batched interface -----------------------------------------------------

    def init_batch(self, n: int) -> dict:
        return {
            "bits": np.zeros((n, self.total_bits), dtype=np.uint8),
            "counts": np.zeros((n, self.n_cycles), dtype=np.int64),
            "phase": np.zeros(n, dtype=np.int64),
            "ccycle": np.full(n, -1, dtype=np.int64),
            "ccluster": np.full(n, -1, dtype=np.int64),
        }

    def observe(self, batch: dict, rows=None) -> np.ndarray:
        if rows is None:
            rows = np.arange(len(batch["phase"]))
        bits = batch["bits"][rows]
        phase = batch["phase"][rows]
        ccycle = batch["ccycle"][rows]
        ccluster = batch["ccluster"][rows]
        b = len(rows)
        obs = np.zeros((b, self.obs_dim), dtype=np.float64)
        obs[:, : self.total_bits] = bits
        base = self.total_bits
        has_cycle = phase != Phase.CHOOSE_CYCLE
        r = np.nonzero(has_cycle)[0]
        obs[r, base + ccycle[r]] = 1.0
        has_cluster = phase == Phase.CHOOSE_BLOCK
        r = np.nonzero(has_cluster)[0]
        obs[r, base + self.n_cycles + ccluster[r]] = 1.0
        obs[:, -2] = has_cycle
        obs[:, -1] = has_cluster
        return obs

    def valid_mask_batch(self, batch: dict, rows=None) -> np.ndarray:
        if rows is None:
            rows = np.arange(len(batch["phase"]))
        bits = batch["bits"][rows]
        counts = batch["counts"][rows]
        phase = batch["phase"][rows]
        ccycle = batch["ccycle"][rows]
        ccluster = batch["ccluster"][rows]
        b = len(rows)
        mask = np.zeros((b, self.n_actions), dtype=bool)

        at_cycle = phase == Phase.CHOOSE_CYCLE
        if at_cycle.any():
            r = np.nonzero(at_cycle)[0]
            size = counts[r].prod(axis=1)
            others = np.empty_like(counts[r])
            for c in range(self.n_cycles):
                others[:, c] = np.prod(np.delete(counts[r], c, axis=1), axis=1)
            post = (counts[r] + 1) * others
            sizes = np.array(self.spec.cycle_sizes)
            ok = (counts[r] < sizes[None, :]) & (post <= self.constraint.max_size)
            mask[np.repeat(r, self.n_cycles), np.tile(
                np.arange(self.cycle_base, self.cycle_base + self.n_cycles), len(r)
            )] = ok.ravel()
            mask[r, self.stop_action] = (size >= self.constraint.min_size) & (
                size <= self.constraint.max_size
            )

        at_cluster = phase == Phase.CHOOSE_CLUSTER
        if at_cluster.any():
            r = np.nonzero(at_cluster)[0]
            for c in range(self.n_cycles):
                rc = r[ccycle[r] == c]
                if len(rc) == 0:
                    continue
                sl = self.spec.slices()[c]
                unsel = bits[rc, sl.start : sl.stop] == 0  # (m, size_c)
                valid = unsel @ self.membership[c].T > 0  # (m, n_clusters_c)
                g = self.membership[c].shape[0]
                mask[
                    np.repeat(rc, g),
                    np.tile(np.arange(self.cluster_base, self.cluster_base + g), len(rc)),
                ] = valid.ravel()

        at_block = phase == Phase.CHOOSE_BLOCK
        if at_block.any():
            r = np.nonzero(at_block)[0]
            for c in range(self.n_cycles):
                rc = r[ccycle[r] == c]
                if len(rc) == 0:
                    continue
                sl = self.spec.slices()[c]
                unsel = bits[rc, sl.start : sl.stop] == 0
                in_cluster = self.membership[c][ccluster[rc]]  # (m, size_c)
                valid = unsel & in_cluster
                w = self.spec.cycle_sizes[c]
                mask[
                    np.repeat(rc, w),
                    np.tile(np.arange(self.block_base, self.block_base + w), len(rc)),
                ] = valid.ravel()
        return mask

    def apply_actions(self, batch: dict, rows: np.ndarray, actions: np.ndarray) -> None:
        """Apply non-Stop unified-head actions in place for the given rows."""
        phase = batch["phase"][rows]
        is_cycle = phase == Phase.CHOOSE_CYCLE
        r = rows[is_cycle]
        if len(r):
            batch["ccycle"][r] = actions[is_cycle] - self.cycle_base
            batch["phase"][r] = Phase.CHOOSE_CLUSTER
        is_cluster = phase == Phase.CHOOSE_CLUSTER
        r = rows[is_cluster]
        if len(r):
            batch["ccluster"][r] = actions[is_cluster] - self.cluster_base
            batch["phase"][r] = Phase.CHOOSE_BLOCK
        is_block = phase == Phase.CHOOSE_BLOCK
        r = rows[is_block]
        if len(r):
            local = actions[is_block] - self.block_base
            cyc = batch["ccycle"][r]
            flat = np.array(self.offsets)[cyc] + local
            batch["bits"][r, flat] = 1
            np.add.at(batch["counts"], (r, cyc), 1)
            batch["phase"][r] = Phase.CHOOSE_CYCLE
            batch["ccycle"][r] = -1
            batch["ccluster"][r] = -1

    # common rollout protocol shared with FlatEnv

    def reset_rows(self, batch: dict, rows: np.ndarray) -> None:
        batch["bits"][rows] = 0
        batch["counts"][rows] = 0
        batch["phase"][rows] = Phase.CHOOSE_CYCLE
        batch["ccycle"][rows] = -1
        batch["ccluster"][rows] = -1

    def masks(self, batch: dict, rows=None) -> np.ndarray:
        return self.valid_mask_batch(batch, rows)

    def apply(self, batch: dict, rows: np.ndarray, actions: np.ndarray) -> None:
        self.apply_actions(batch, rows, actions)

    def added_bits(self, batch: dict, rows: np.ndarray, actions: np.ndarray):
        """Block-phase micro-steps add a block; earlier phases do not.

        Must be called before :meth:`apply`.
        """
        adds = batch["phase"][rows] == Phase.CHOOSE_BLOCK
        flat = np.zeros(len(rows), dtype=np.int64)
        if adds.any():
            cyc = batch["ccycle"][rows[adds]]
            local = actions[adds] - self.block_base
            flat[adds] = np.array(self.offsets)[cyc] + local
        return adds, flat

    def backward_observe(self, bits: np.ndarray) -> np.ndarray:
        """Hier observation of a completed-triple state (one-hots and flags zero)."""
        b = bits.shape[0]
        obs = np.zeros((b, self.obs_dim), dtype=np.float64)
        obs[:, : self.total_bits] = bits
        return obs

    def backward_mask(self, bits: np.ndarray) -> np.ndarray:
        return bits.astype(bool)


# spec-surface single-state operations --------------------------------------

STOP = "stop"


def valid_mask_hier(
    state: HierState, spec: CycleSpec, cmap: ClusterMap, constraint: SizeConstraint
) -> np.ndarray:
    """Mask over the current phase's actions; at CHOOSE_CYCLE the final entry is Stop."""
    env = HierEnv(spec, constraint, cmap)
    batch = _to_batch(state, env)
    unified = env.valid_mask_batch(batch)[0]
    if state.phase == Phase.CHOOSE_CYCLE:
        out = np.concatenate(
            [
                unified[env.cycle_base : env.cycle_base + env.n_cycles],
                unified[env.stop_action : env.stop_action + 1],
            ]
        )
        return out
    if state.phase == Phase.CHOOSE_CLUSTER:
        g = cmap.n_clusters[state.chosen_cycle]
        return unified[env.cluster_base : env.cluster_base + g]
    w = spec.cycle_sizes[state.chosen_cycle]
    return unified[env.block_base : env.block_base + w]


def step_hier(
    state: HierState,
    action: int | str,
    spec: CycleSpec,
    cmap: ClusterMap,
    constraint: SizeConstraint,
) -> tuple[HierState, bool]:
    """Apply a phase-local action (or STOP at CHOOSE_CYCLE); returns (next, terminal)."""
    mask = valid_mask_hier(state, spec, cmap, constraint)
    if action == STOP:
        if state.phase != Phase.CHOOSE_CYCLE or not mask[-1]:
            raise InvalidTransitionError("Stop is only valid at the cycle phase within size bounds")
        return state, True
    action = int(action)
    n_choices = len(mask) - 1 if state.phase == Phase.CHOOSE_CYCLE else len(mask)
    if not 0 <= action < n_choices or not mask[action]:
        raise InvalidTransitionError(f"action {action} invalid in phase {state.phase.name}")
    if state.phase == Phase.CHOOSE_CYCLE:
        return HierState(state.bits, Phase.CHOOSE_CLUSTER, action, None), False
    if state.phase == Phase.CHOOSE_CLUSTER:
        return HierState(state.bits, Phase.CHOOSE_BLOCK, state.chosen_cycle, action), False
    flat = spec.offset(state.chosen_cycle) + action
    return HierState(state.bits.with_bit_set(flat)), False


def encode_hier_observation(state: HierState, spec: CycleSpec, cmap: ClusterMap) -> np.ndarray:
    """bits + cycle one-hot + cluster one-hot (shared max width) + picked flags."""
    max_clusters = max(cmap.n_clusters)
    obs = np.zeros(spec.total_bits + spec.n_cycles + max_clusters + 2)
    obs[: spec.total_bits] = state.bits.to_array()
    if state.chosen_cycle is not None:
        obs[spec.total_bits + state.chosen_cycle] = 1.0
        obs[-2] = 1.0
    if state.chosen_cluster is not None:
        obs[spec.total_bits + spec.n_cycles + state.chosen_cluster] = 1.0
        obs[-1] = 1.0
    return obs


def _to_batch(state: HierState, env: HierEnv) -> dict:
    batch = env.init_batch(1)
    batch["bits"][0] = state.bits.to_array()
    batch["counts"][0] = cycle_counts(state.bits, env.spec)
    batch["phase"][0] = int(state.phase)
    batch["ccycle"][0] = -1 if state.chosen_cycle is None else state.chosen_cycle
    batch["ccluster"][0] = -1 if state.chosen_cluster is None else state.chosen_cluster
    return batch
