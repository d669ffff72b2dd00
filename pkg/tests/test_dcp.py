import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from greenhaze.dcp import (
    OMEGA_GRID,
    DcpParams,
    best_omega,
    box_mean,
    dark_channel,
    dehaze_dcp,
    estimate_airlight,
    estimate_transmission,
    fit_omega_regressor,
    global_stats_features,
    guided_filter,
    predict_omega,
    recover_radiance,
)
from greenhaze.harness import HazeSpec, procedural_scenes, synthesize_haze
from greenhaze.imaging import luminance, psnr, rgb_to_yuv
from greenhaze.trees import BAGGED, Tree, TreeEnsembleModel

image = arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)), elements=st.floats(0, 1))


def dark_oracle(img, r):
    h, w, _ = img.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            best = np.inf
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    best = min(best, img[ii, jj].min())
            out[i, j] = best
    return out


def test_params_validation():
    DcpParams()
    for bad in ({"omega": 0}, {"omega": 1.1}, {"t0": 0}, {"patch_radius": 0}, {"bright_fraction": 0},
                {"gf_eps": 0}):
        with pytest.raises(ValueError):
            DcpParams(**bad)


def test_dark_channel_simple_cases():
    assert np.all(dark_channel(np.tile([0.4, 0.6, 0.5], (6, 5, 1)), 2) == 0.4)
    assert np.all(dark_channel(np.zeros((4, 4, 3)), 1) == 0)
    with pytest.raises(ValueError):
        dark_channel(np.zeros((4, 4, 1)), 1)


def test_dark_channel_bright_pixel_oracle():
    img = np.full((5, 5, 3), 0.2)
    img[2, 2] = 1.0
    assert np.array_equal(dark_channel(img, 1), dark_oracle(img, 1))


@given(image, st.integers(1, 3))
def test_dark_channel_matches_brute_force(img, r):
    d = dark_channel(img, r)
    assert np.array_equal(d, dark_oracle(img, r))
    assert np.all(d <= img.min(axis=2))


def test_airlight_cases(rng):
    img = np.full((10, 10, 3), 0.8)
    assert np.array_equal(estimate_airlight(img, dark_channel(img, 1), 0.01), [0.8, 0.8, 0.8])
    img = rng.random((20, 20, 3)) * 0.5
    img[3:6, 3:6] = 1.0
    assert np.array_equal(estimate_airlight(img, dark_channel(img, 1), 0.05), [1, 1, 1])
    dark_img = np.zeros((4, 4, 3))
    assert np.all(estimate_airlight(dark_img, dark_channel(dark_img, 1), 0.1) == 0.05)


def test_airlight_matches_sort_oracle(rng):
    for _ in range(5):
        img = rng.random((40, 50, 3))
        dark = dark_channel(img, 3)
        k = math.ceil(0.001 * dark.size)
        flat = dark.ravel()
        order = sorted(range(flat.size), key=lambda i: (-flat[i], i))[:k]
        lum = luminance(img).ravel()
        best = max(order, key=lambda i: (lum[i], -order.index(i)))
        expect = np.maximum(img.reshape(-1, 3)[best], 0.05)
        assert np.array_equal(estimate_airlight(img, dark, 0.001), expect)


def test_transmission_cases():
    a = np.array([0.7, 0.8, 0.9])
    t = estimate_transmission(np.tile(a, (6, 6, 1)), a, 0.95, 2)
    np.testing.assert_allclose(t, 0.05, atol=1e-15)
    assert np.all(estimate_transmission(np.zeros((5, 5, 3)), a, 0.7, 2) == 1.0)
    with pytest.raises(ValueError):
        estimate_transmission(np.zeros((3, 3, 3)), [0, 1, 1], 0.9, 1)


def test_transmission_constant_haze_closed_form(rng):
    clear = procedural_scenes(1, 48, seed=1)[0]
    a = np.array([0.85, 0.85, 0.85])
    t_star = 0.5
    hazy = synthesize_haze(clear, HazeSpec(-math.log(t_star), a, 1.0))
    omega, r = 0.95, 3
    expect = 1 - omega * (1 - t_star + t_star * dark_channel(clear / a, r))
    np.testing.assert_allclose(estimate_transmission(hazy, a, omega, r), expect, atol=1e-12)


@given(image, st.floats(0.05, 1.0))
def test_transmission_range(img, omega):
    t = estimate_transmission(img, np.ones(3), omega, 1)
    assert t.min() >= 1 - omega - 1e-12 and t.max() <= 1.0


def test_guided_filter_cases(rng):
    guide = rng.random((20, 20, 3))
    np.testing.assert_allclose(guided_filter(guide, np.full((20, 20), 0.3), 4, 1e-3), 0.3, atol=1e-12)
    src = rng.random((20, 20))
    # a = 0 and b = mean(src); the output averages b once more.
    expect = box_mean(box_mean(src, 3), 3)
    np.testing.assert_allclose(guided_filter(np.full((20, 20), 0.5), src, 3, 1e-3), expect, atol=1e-12)
    for eps in (1e-4, 1e-6):
        out = guided_filter(src, src, 2, eps)
        assert np.max(np.abs(out - src)) < 1e4 * eps
    with pytest.raises(ValueError):
        guided_filter(guide, src[:10], 2, 1e-3)
    with pytest.raises(ValueError):
        guided_filter(guide, src, 2, 0.0)


@given(st.floats(0, 1), st.integers(1, 6), st.floats(1e-6, 1))
def test_guided_filter_constant_property(c, r, eps):
    guide = np.linspace(0, 1, 49).reshape(7, 7)
    np.testing.assert_allclose(guided_filter(guide, np.full((7, 7), c), r, eps), c, atol=1e-12)


def test_recover_radiance_cases(rng):
    img = rng.random((6, 6, 3))
    a = np.array([0.9, 0.8, 0.7])
    assert np.array_equal(recover_radiance(img, a, np.ones((6, 6)), 0.1, clamp=False), img)
    flat = np.tile(a, (6, 6, 1))
    np.testing.assert_allclose(recover_radiance(flat, a, rng.random((6, 6)), 0.1), flat, atol=1e-15)


def test_asm_round_trip(rng):
    clear = rng.random((16, 16, 3))
    a = np.array([0.9, 0.85, 0.95])
    t = rng.uniform(0.2, 1.0, (16, 16))
    hazy = clear * t[:, :, None] + a * (1 - t[:, :, None])
    np.testing.assert_allclose(recover_radiance(hazy, a, t, 0.1), clear, atol=1e-12)


def test_global_stats(rng):
    gray = np.full((5, 5, 3), 0.4)
    f = global_stats_features(gray)
    assert f.shape == (24,)
    np.testing.assert_allclose(f[:16], [0.4, 0.4, 0.4, 0] * 4, atol=1e-15)
    np.testing.assert_allclose(f[16:], [0.5, 0.5, 0.5, 0] * 2, atol=1e-15)
    img = rng.random((9, 11, 3))
    chans = np.concatenate([img, rgb_to_yuv(img)], axis=2)
    expect = []
    for c in range(6):
        x = chans[:, :, c].ravel()
        m = sum(x) / len(x)
        expect += [m, min(x), max(x), sum((v - m) ** 2 for v in x) / len(x)]
    np.testing.assert_allclose(global_stats_features(img), expect, atol=1e-12)


def _leaf_forest(values):
    return TreeEnsembleModel(BAGGED, [Tree.leaf(v) for v in values], 0.0, 1.0, 24)


def test_predict_omega_clamp_and_mean(rng):
    assert predict_omega(_leaf_forest([0.9]), np.zeros(24)) == 0.9
    assert predict_omega(_leaf_forest([1.3]), np.zeros(24)) == 0.98
    assert predict_omega(_leaf_forest([0.6, 0.8]), np.zeros(24)) == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ValueError):
        predict_omega(_leaf_forest([0.9]), np.zeros(5))


def test_dehaze_preserves_shape_and_range(rng):
    img = rng.random((33, 21, 3))
    out = dehaze_dcp(img)
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1


def test_dehaze_improves_uniform_haze():
    clears = procedural_scenes(4, 64, seed=5)
    for clear in clears:
        hazy = synthesize_haze(clear, HazeSpec(math.log(2), [0.85] * 3, 1.0))
        assert psnr(dehaze_dcp(hazy, DcpParams(omega=0.95)), clear) > psnr(hazy, clear)


def test_best_omega_on_clear_input_is_smallest():
    clear = procedural_scenes(1, 48, seed=2)[0]
    assert best_omega(clear, clear) == OMEGA_GRID[0]


def test_clear_input_near_identity_with_small_omega():
    clear = procedural_scenes(1, 64, seed=8)[0]
    assert psnr(dehaze_dcp(clear, DcpParams(omega=0.5)), clear) >= 20.0


def test_fit_omega_regressor_errors_and_constant_labels():
    clears = procedural_scenes(10, 40, seed=4)
    pairs = [(c, synthesize_haze(c, HazeSpec(1.0, [0.9] * 3, 1.0))) for c in clears]
    with pytest.raises(ValueError):
        fit_omega_regressor(pairs[:9])
    model, labels = fit_omega_regressor(pairs, n_trees=10, return_labels=True)
    preds = np.array([predict_omega(model, global_stats_features(h)) for _, h in pairs])
    assert np.mean(np.abs(preds - labels) <= 0.05) >= 0.8
    model0 = fit_omega_regressor(pairs, n_trees=5, max_depth=0)
    np.testing.assert_allclose(model0.predict(np.zeros((1, 24))), np.mean(labels), atol=0.05)
