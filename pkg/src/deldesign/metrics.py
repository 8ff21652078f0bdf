"""Evaluation of sample sets: pairwise diversity, top-k summaries, profiles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DesignState, SampleSet, decode_selection
from .errors import DimensionError, UndefinedDiversityError
from .reward import ScoreTable

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


@dataclass
class PropertyTable:
    """Named per-molecule property tensors with score-table dimensions."""

    name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError("property tensor must be 3-dimensional")


@dataclass
class EvalReport:
    """Table-style summary of one sample set."""

    mean_probability: float
    diversity: float | None  # None when fewer than 2 samples
    topk_probability: float
    topk_diversity: float | None
    top1_probability: float
    k: int
    n_samples: int
    property_histograms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_probability": self.mean_probability,
            "diversity": self.diversity,
            "topk_probability": self.topk_probability,
            "topk_diversity": self.topk_diversity,
            "top1_probability": self.top1_probability,
            "k": self.k,
            "n_samples": self.n_samples,
            "property_histograms": self.property_histograms,
        }


def diversity(states: Sequence[DesignState]) -> float:
    """Mean pairwise normalized Hamming distance over all ordered distinct pairs.

    Exact: integer bit counts over packed words, normalized once at the end.
    """
    if isinstance(states, SampleSet):
        states = states.states()
    n = len(states)
    if n < 2:
        raise UndefinedDiversityError("diversity needs at least 2 states")
    width = len(states[0])
    if any(len(s) != width for s in states):
        raise DimensionError("states must share one length")
    bits = np.stack([s.to_array() for s in states])
    packed = np.packbits(bits, axis=1)
    total = 0
    for i in range(n - 1):
        x = np.bitwise_xor(packed[i + 1 :], packed[i])
        total += int(_POPCOUNT[x].sum())
    # unordered pairs counted once; the ordered-pair mean is identical
    return total / (n * (n - 1) / 2) / width


def topk_summary(samples: SampleSet, k: int) -> EvalReport:
    """Whole-set, top-k, and top-1 statistics, ranked by log-reward."""
    if len(samples) < 1:
        raise DimensionError("need at least one sample")
    if k > len(samples):
        warnings.warn(f"k={k} exceeds sample count {len(samples)}; clamping")
        k = len(samples)
    order = np.argsort(-samples.log_rewards(), kind="stable")
    scores = samples.mean_scores()
    states = samples.states()
    top = order[:k]
    div_all = diversity(states) if len(samples) >= 2 else None
    div_top = diversity([states[i] for i in top]) if k >= 2 else None
    return EvalReport(
        mean_probability=float(scores.mean()),
        diversity=div_all,
        topk_probability=float(scores[top].mean()),
        topk_diversity=div_top,
        top1_probability=float(scores[order[0]]),
        k=k,
        n_samples=len(samples),
    )


def library_property_mean(state: DesignState, prop: PropertyTable) -> float:
    """Mean of one property over the state's Cartesian-product library."""
    from .core import CycleSpec

    spec = CycleSpec(prop.values.shape)
    sel = decode_selection(state, spec)
    return float(prop.values[np.ix_(*sel)].mean())


def property_profile(
    samples: SampleSet, props: Sequence[PropertyTable], bins: int = 20
) -> dict:
    """Per-property histograms of library-average values across the samples.

    Returns {name: {"edges": [...], "counts": [...], "values": [...]}}.
    Samples with an empty library are skipped with a warning.
    """
    out = {}
    for prop in props:
        values = []
        for e in samples.entries:
            sel = decode_selection(e.state, _spec_of(prop))
            if any(len(s) == 0 for s in sel):
                warnings.warn("skipping a sample with an empty library")
                continue
            values.append(float(prop.values[np.ix_(*sel)].mean()))
        values = np.array(values)
        if len(values) == 0:
            out[prop.name] = {"edges": [], "counts": [], "values": []}
            continue
        counts, edges = np.histogram(values, bins=bins)
        out[prop.name] = {
            "edges": edges.tolist(),
            "counts": counts.tolist(),
            "values": values.tolist(),
        }
    return out


def _spec_of(prop: PropertyTable):
    from .core import CycleSpec

    return CycleSpec(prop.values.shape)


def evaluate(
    samples: SampleSet,
    k: int = 100,
    props: Sequence[PropertyTable] = (),
    bins: int = 20,
) -> EvalReport:
    report = topk_summary(samples, k)
    if props:
        report.property_histograms = property_profile(samples, props, bins)
    return report
