"""Input validation helpers shared by the estimator-style wrappers."""

from __future__ import annotations

import numpy as np

from .core import CycleSpec, SizeConstraint
from .reward import ScoreTable


def as_score_table(X) -> ScoreTable:
    """Accept a ScoreTable or a 3-d array of scores in [0, 1]."""
    if isinstance(X, ScoreTable):
        return X
    return ScoreTable(np.asarray(X, dtype=np.float64))


def as_rng(seed) -> np.random.Generator:
    """Accept None, an int seed, or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_problem(table: ScoreTable, min_size: int, max_size: int) -> tuple[CycleSpec, SizeConstraint]:
    spec = table.spec()
    return spec, SizeConstraint(int(min_size), int(max_size))
