import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenhaze.lnt import (
    RankDeficientError,
    apply_lnt,
    apply_lnt_rows,
    bin_targets,
    build_indicator,
    fit_lnt,
    make_level2,
    quantile_edges,
)


def test_median_split():
    T = build_indicator(np.arange(1, 11, dtype=float), 2)
    assert T[0].tolist() == [1] * 5 + [0] * 5
    assert T[1].tolist() == [0] * 5 + [1] * 5
    assert np.all(T.sum(axis=0) == 1)


def test_ties_go_to_lower_bin():
    y = np.array([1.0, 2.0, 2.0, 2.0, 3.0, 4.0])
    # Rank split would put the third 2.0 in bin 1; the tie pulls it down.
    assert bin_targets(y, 2).tolist() == [0, 0, 0, 0, 1, 1]


@given(st.integers(0, 2**31 - 1), st.integers(2, 9), st.integers(0, 60))
def test_bins_balanced(seed, m, extra):
    y = np.random.default_rng(seed).random(m + extra)
    counts = np.bincount(bin_targets(y, m), minlength=m)
    ell = len(y)
    assert np.all(np.abs(counts - ell / m) <= 1)
    edges = quantile_edges(y, m)
    assert np.all(np.diff(edges) > 0)


def test_indicator_errors():
    with pytest.raises(ValueError):
        build_indicator(np.array([1.0, 1.0, 2.0]), 3)
    with pytest.raises(ValueError):
        build_indicator(np.array([1.0, 2.0]), 3)


def _instance(rng, n, m, ell):
    X = rng.normal(size=(n, ell)) * rng.uniform(0.5, 3, (n, 1)) + rng.normal(size=(n, 1))
    T = build_indicator(rng.random(ell), m)
    return X, T


def test_pinv_oracle_and_orthogonality(rng):
    for _ in range(100):
        n, m = rng.integers(2, 8), rng.integers(2, 6)
        X, T = _instance(rng, n, m, int(rng.integers(n + 5, 60)))
        xf = fit_lnt(X, T, ridge=0.0)
        Xc = X - X.mean(axis=1, keepdims=True)
        A = (T - T.mean(axis=1, keepdims=True)) @ np.linalg.pinv(Xc)
        assert np.linalg.norm(xf.a_matrix - A) <= 1e-8 * np.linalg.norm(A)
        resid = (T - xf.a_matrix @ X - xf.b_bias[:, None]) @ X.T
        assert np.abs(resid).max() <= 1e-6 * np.linalg.norm(T) * np.linalg.norm(X)
        np.testing.assert_allclose(xf.b_bias, T.mean(axis=1) - xf.a_matrix @ X.mean(axis=1), atol=1e-12)


def test_self_regression_gives_identity(rng):
    q, _ = np.linalg.qr(rng.normal(size=(40, 4)))
    X = q.T - q.T.mean(axis=1, keepdims=True)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    q2, _ = np.linalg.qr(X.T)
    X = q2.T  # orthonormal rows, each orthogonal to the ones vector
    xf = fit_lnt(X, X, ridge=0.0)
    np.testing.assert_allclose(xf.a_matrix, np.eye(4), atol=1e-10)
    x = rng.normal(size=4)
    np.testing.assert_allclose(apply_lnt(xf, x), x - xf.x_mean, atol=1e-10)


def test_ridge_shrinks_a(rng):
    X, T = _instance(rng, 5, 4, 80)
    norms = [np.linalg.norm(fit_lnt(X, T, ridge=r).a_matrix) for r in (1e-3, 1.0, 1e3)]
    assert norms[0] > norms[1] > norms[2]


def test_rank_deficient(rng):
    X, T = _instance(rng, 3, 2, 30)
    X = np.vstack([X, X[0] * 2.0])
    with pytest.raises(RankDeficientError):
        fit_lnt(X, T, ridge=0.0)
    fit_lnt(X, T, ridge=None)
    with pytest.raises(ValueError):
        fit_lnt(X, T[:, :10])
    with pytest.raises(ValueError):
        fit_lnt(X, T, ridge=-1.0)


def test_least_squares_beats_random_matrices(rng):
    X, T = _instance(rng, 4, 3, 60)
    xf = fit_lnt(X, T, ridge=0.0)
    Xc = X - X.mean(axis=1, keepdims=True)
    Tc = T - T.mean(axis=1, keepdims=True)
    best = np.linalg.norm(Tc - xf.a_matrix @ Xc)
    for _ in range(100):
        assert best <= np.linalg.norm(Tc - rng.normal(size=xf.a_matrix.shape) @ Xc)


def test_apply_properties(rng):
    X, T = _instance(rng, 5, 4, 50)
    xf = fit_lnt(X, T, ridge=0.0)
    np.testing.assert_allclose(apply_lnt(xf, xf.x_mean), 0.0, atol=0)
    batch = apply_lnt(xf, X)
    rows = np.stack([apply_lnt(xf, X[:, i]) for i in range(X.shape[1])], axis=1)
    assert np.array_equal(batch, rows)
    assert np.array_equal(apply_lnt_rows(xf, X.T), batch.T)
    x1, x2 = rng.normal(size=5), rng.normal(size=5)
    for a in (0.0, 0.3, 1.0):
        mix = a * x1 + (1 - a) * x2
        np.testing.assert_allclose(apply_lnt(xf, mix), a * apply_lnt(xf, x1) + (1 - a) * apply_lnt(xf, x2), atol=1e-10)
    with pytest.raises(ValueError):
        apply_lnt(xf, np.zeros(3))


def test_make_level2_line_data(rng):
    y = rng.random(200)
    level1 = np.vstack([y + 0.01 * rng.normal(size=200), rng.normal(size=200)])
    xf, D = make_level2(level1, y, m=2)
    assert D.shape == (2, 200)
    c0, c1 = np.corrcoef(D[0], y)[0, 1], np.corrcoef(D[1], y)[0, 1]
    assert c0 * c1 < 0
    assert xf.bin_edges.shape == (3,)
