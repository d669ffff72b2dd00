"""Least-squares normal transform (LNT) for generating Level-2 features.

Regression targets are turned into pseudo-classes by equal-population
quantile binning; a linear map ``A`` fitted by the normal equations against
the one-hot indicator then projects any feature vector onto ``m``
discriminant directions.

Matrices follow the column-per-sample layout: features ``X`` are ``n x l``
and indicators ``T`` are ``m x l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass
class LNTTransform:
    a_matrix: np.ndarray  # (m, n)
    b_bias: np.ndarray  # (m,)
    x_mean: np.ndarray  # (n,)
    bin_edges: np.ndarray  # (m + 1,)

    @property
    def n_in(self) -> int:
        return self.a_matrix.shape[1]

    @property
    def n_out(self) -> int:
        return self.a_matrix.shape[0]


def quantile_edges(target, m: int) -> np.ndarray:
    """``m + 1`` cut points of the :func:`bin_targets` bins.

    The outer edges are the target extremes; each inner edge is the midpoint
    between the largest value of one bin and the smallest of the next. Edges
    strictly increase whenever every bin is populated.
    """
    y = np.asarray(target, dtype=np.float64).ravel()
    labels = bin_targets(y, m)
    edges = np.empty(m + 1)
    edges[0], edges[m] = y.min(), y.max()
    for k in range(1, m):
        below, above = y[labels < k], y[labels >= k]
        edges[k] = 0.5 * (below.max() + above.min()) if len(below) and len(above) else edges[k - 1]
    return edges


def bin_targets(target, m: int) -> np.ndarray:
    """Equal-population bin label per sample; ties at an edge go to the lower bin.

    Samples are ranked by value (stable), and rank ``r`` of ``l`` lands in
    bin ``floor(r * m / l)``. Equal values always share a bin: a run of
    duplicates straddling a boundary is pulled down into the lower bin.
    """
    y = np.asarray(target, dtype=np.float64).ravel()
    l = len(y)
    if m < 2:
        raise ValueError("need at least 2 bins")
    if l < m:
        raise ValueError(f"{l} samples cannot fill {m} bins")
    if np.unique(y).size < m:
        raise ValueError(f"{m} bins requested but target has only {np.unique(y).size} distinct values")
    order = np.argsort(y, kind="stable")
    labels = np.empty(l, np.int64)
    labels[order] = (np.arange(l) * m) // l
    ys = y[order]
    lab = labels[order]
    # Pull the upper part of any tied run down to the run's first label.
    first = np.r_[True, ys[1:] != ys[:-1]]
    run_label = np.maximum.accumulate(np.where(first, np.arange(l), 0))
    lab = lab[run_label]
    labels[order] = lab
    return labels


def build_indicator(target, m: int) -> np.ndarray:
    """One-hot ``m x l`` indicator of the quantile bin of each sample."""
    labels = bin_targets(target, m)
    T = np.zeros((m, len(labels)))
    T[labels, np.arange(len(labels))] = 1.0
    return T


def default_ridge(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=1, keepdims=True)
    return 1e-6 * float(np.sum(Xc * Xc)) / X.shape[0]


def fit_lnt(features, indicator, ridge: float | None = 0.0, bin_edges=None) -> LNTTransform:
    """Solve ``A = T Xc^T (Xc Xc^T + ridge I)^-1`` on mean-centred ``X``.

    ``ridge=None`` picks :func:`default_ridge`.
    """
    X = np.asarray(features, dtype=np.float64)
    T = np.asarray(indicator, dtype=np.float64)
    if X.ndim != 2 or T.ndim != 2 or X.shape[1] != T.shape[1]:
        raise ValueError(f"features {X.shape} and indicator {T.shape} do not share samples")
    if ridge is None:
        ridge = default_ridge(X)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    x_mean = X.mean(axis=1)
    Xc = X - x_mean[:, None]
    gram = Xc @ Xc.T + ridge * np.eye(X.shape[0])
    rhs = T @ Xc.T
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(gram)
        if rank < gram.shape[0]:
            raise RankDeficientError(f"X X^T has rank {rank} < {gram.shape[0]}; use ridge > 0")
    a = np.linalg.solve(gram, rhs.T).T
    b = T.mean(axis=1) - a @ x_mean
    if bin_edges is None:
        bin_edges = np.arange(T.shape[0] + 1, dtype=np.float64)
    return LNTTransform(a, b, x_mean, np.asarray(bin_edges, dtype=np.float64))


def _project(a: np.ndarray, xc: np.ndarray) -> np.ndarray:
    # Fixed-order multiply-add over input features: every output entry is
    # rounded identically whether x is one vector or a batch.
    out = a[:, 0:1] * xc[0:1] if xc.ndim == 2 else a[:, 0] * xc[0]
    for k in range(1, a.shape[1]):
        out = out + (a[:, k : k + 1] * xc[k : k + 1] if xc.ndim == 2 else a[:, k] * xc[k])
    return out


def apply_lnt(xform: LNTTransform, x) -> np.ndarray:
    """``d = A (x - mean)``. A 1-D ``x`` gives one vector; a 2-D ``x`` is ``n x l``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != xform.n_in:
        raise ValueError(f"expected {xform.n_in} features, got {x.shape[0]}")
    if xform.n_in == 0:
        return np.zeros((xform.n_out,) + x.shape[1:])
    if x.ndim == 1:
        return _project(xform.a_matrix, x - xform.x_mean)
    return _project(xform.a_matrix, x - xform.x_mean[:, None])


def apply_lnt_rows(xform: LNTTransform, rows) -> np.ndarray:
    """Row-major convenience: ``rows`` is ``l x n``, result ``l x m``."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != xform.n_in:
        raise ValueError(f"expected {xform.n_in} features, got {rows.shape[-1]}")
    return apply_lnt(xform, rows.T).T


def make_level2(level1, target, m: int = 8, ridge: float | None = None):
    """Fit an LNT on Level-1 features (``n x l``) and return ``(xform, D)``, ``D`` is ``m x l``."""
    T = build_indicator(target, m)
    xform = fit_lnt(level1, T, ridge, quantile_edges(target, m))
    return xform, apply_lnt(xform, level1)
