"""Correlation statistics used to compare estimated and simulated influence."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("inputs must have equal length")
    if x.size < 2:
        raise ValueError("need at least two samples")
    return x, y


def pearson(x, y) -> float:
    """Product-moment correlation; raises on zero-variance input."""
    x, y = _check(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = (dx * dx).sum()
    syy = (dy * dy).sum()
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance input: correlation undefined")
    r = float((dx * dy).sum() / np.sqrt(sxx * syy))
    return max(-1.0, min(1.0, r))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def spearman(x, y) -> float:
    x, y = _check(x, y)
    return pearson(average_ranks(x), average_ranks(y))
