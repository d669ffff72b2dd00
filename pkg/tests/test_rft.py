import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from greenhaze.rft import candidate_thresholds, rft_score, rft_select


def score_oracle(x, y, bins):
    """Enumerate the same uniform thresholds and compute both side MSEs directly."""
    n = len(x)
    lo, hi = min(x), max(x)
    if lo == hi:
        return float(np.var(y))
    best = None
    for k in range(1, bins + 1):
        t = lo + (hi - lo) * k / (bins + 1)
        left = [y[i] for i in range(n) if x[i] <= t]
        right = [y[i] for i in range(n) if x[i] > t]
        if not left or not right:
            continue
        loss = 0.0
        for side in (left, right):
            m = sum(side) / len(side)
            loss += len(side) / n * (sum((v - m) ** 2 for v in side) / len(side))
        best = loss if best is None else min(best, loss)
    return float(np.var(y)) if best is None else best


def ranking_oracle(X, y, bins):
    scores = [score_oracle(list(X[:, j]), list(y), bins) for j in range(X.shape[1])]
    return sorted(range(len(scores)), key=lambda j: (scores[j], j)), scores


def test_thresholds_strictly_inside():
    t = candidate_thresholds(np.array([0.0, 1.0]), 4)
    np.testing.assert_allclose(t, [0.2, 0.4, 0.6, 0.8])


def test_identity_feature_beats_variance():
    y = np.linspace(0, 1, 200)
    for bins in (15, 31):
        assert rft_score(y, y, bins) < 0.3 * np.var(y)


def test_constant_feature_scores_variance(rng):
    y = rng.random(20)
    assert rft_score(np.full(20, 3.0), y) == np.var(y)


def test_eight_sample_oracle(rng):
    x, y = rng.random(8), rng.random(8)
    assert rft_score(x, y, 4) == pytest.approx(score_oracle(list(x), list(y), 4), abs=1e-15)


def test_select_perfect_vs_useless(rng):
    y = rng.random(30)
    X = np.column_stack([y, np.ones(30)])
    rep = rft_select(X, y, 1)
    assert rep.selected.tolist() == [0]
    full = rft_select(X, y, 2)
    assert sorted(full.selected.tolist()) == [0, 1]


def test_random_instance_matches_oracle(rng):
    X, y = rng.random((30, 6)), rng.random(30)
    rep = rft_select(X, y, 6, bins=8)
    expect, _ = ranking_oracle(X, y, 8)
    assert rep.ranking.tolist() == expect


def test_errors(rng):
    with pytest.raises(ValueError):
        rft_score(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        rft_score(np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        rft_select(rng.random((5, 2)), rng.random(5), 3)


@given(st.integers(0, 2**31 - 1), st.integers(2, 40), st.integers(1, 6), st.integers(1, 8))
def test_report_invariants(seed, n, d, bins):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, d)).astype(float) if seed % 2 else rng.random((n, d))
    y = rng.random(n)
    rep = rft_select(X, y, d, bins)
    assert sorted(rep.ranking.tolist()) == list(range(d))
    assert np.all(np.diff(rep.scores[rep.ranking]) >= 0)
    assert np.all(rep.scores <= np.var(y) + 1e-12)
    expect, _ = ranking_oracle(X, y, bins)
    assert rep.ranking.tolist() == expect


@given(arrays(np.float64, 25, elements=st.floats(0, 1)), st.integers(0, 2**31 - 1))
def test_duplicate_columns_tie(x, seed):
    y = np.random.default_rng(seed).random(25)
    rep = rft_select(np.column_stack([x, x]), y, 2)
    assert rep.scores[0] == rep.scores[1]
    assert rep.ranking.tolist() == [0, 1]


def test_affine_invariance(rng):
    for _ in range(20):
        x, y = rng.random(40), rng.random(40)
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        assert rft_score(a * x + b, y, 16) == pytest.approx(rft_score(x, y, 16), abs=1e-12)


def test_row_permutation_invariance(rng):
    X, y = rng.random((35, 4)), rng.random(35)
    perm = rng.permutation(35)
    a = rft_select(X, y, 4).scores
    b = rft_select(X[perm], y[perm], 4).scores
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
