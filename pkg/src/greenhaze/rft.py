"""Relevant Feature Test: rank regression features by their best single split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 31


@dataclass
class RFTReport:
    scores: np.ndarray
    ranking: np.ndarray
    selected: np.ndarray
    bin_count: int


def candidate_thresholds(feature, bins: int) -> np.ndarray:
    """``bins`` evenly spaced cut points strictly inside the feature range."""
    lo, hi = float(np.min(feature)), float(np.max(feature))
    return lo + (hi - lo) * np.arange(1, bins + 1) / (bins + 1)


def rft_score(feature, target, bins: int = DEFAULT_BINS) -> float:
    """Minimum over thresholds of the size-weighted MSE of two mean predictors."""
    x = np.asarray(feature, dtype=np.float64).ravel()
    y = np.asarray(target, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"feature has {len(x)} values, target {len(y)}")
    if len(x) == 0:
        raise ValueError("empty input")
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    var = float(np.var(y))
    if np.unique(x).size < 2:
        return var

    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    thresholds = candidate_thresholds(xs, bins)
    # Left side of threshold t holds the first n_left sorted samples.
    n_left = np.searchsorted(xs, thresholds, side="right")
    valid = (n_left > 0) & (n_left < n)
    if not valid.any():
        return var
    n_left, thresholds = n_left[valid], thresholds[valid]
    # Screen every threshold with prefix sums of the centred target ...
    yc = ys - ys.mean()
    s1 = np.concatenate([[0.0], np.cumsum(yc)])
    s2 = np.concatenate([[0.0], np.cumsum(yc * yc)])
    nl = n_left.astype(np.float64)
    nr = n - nl
    sse_l = s2[n_left] - s1[n_left] ** 2 / nl
    sse_r = (s2[n] - s2[n_left]) - (s1[n] - s1[n_left]) ** 2 / nr
    loss = (np.maximum(sse_l, 0.0) + np.maximum(sse_r, 0.0)) / n
    # ... then score the near-optimal ones directly in row order, so that any
    # two columns inducing the same partition get bit-identical scores.
    near = np.flatnonzero(loss <= loss.min() * (1 + 1e-9) + 1e-300)
    _, first = np.unique(n_left[near], return_index=True)
    return min(_split_loss(y, x <= thresholds[near[i]]) for i in first)


def _split_loss(y: np.ndarray, left: np.ndarray) -> float:
    n = len(y)
    total = 0.0
    for side in (y[left], y[~left]):
        total += len(side) / n * float(np.mean((side - side.mean()) ** 2))
    return total


def rft_select(features, target, keep: int, bins: int = DEFAULT_BINS) -> RFTReport:
    """Score every column and keep the ``keep`` lowest-loss ones."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    d = X.shape[1]
    if keep > d or keep < 0:
        raise ValueError(f"keep={keep} outside [0, {d}]")
    scores = np.array([rft_score(X[:, j], target, bins) for j in range(d)])
    ranking = np.argsort(scores, kind="stable")
    return RFTReport(scores, ranking, ranking[:keep].copy(), bins)
