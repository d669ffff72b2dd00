"""Preliminary dehazing with a dark channel prior and a learned strength.

The haze-removal strength ``omega`` is either fixed or regressed per image by
a random forest over global colour statistics. Window minima and box
filters replicate edge pixels.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter

from .imaging import luminance, psnr, require_rgb, rgb_to_yuv
from .trees import TreeEnsembleModel, fit_random_forest

OMEGA_MIN, OMEGA_MAX = 0.5, 0.98
OMEGA_GRID = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2)) + (0.98,)
AIRLIGHT_FLOOR = 0.05


@dataclass(frozen=True)
class DcpParams:
    omega: float = 0.95
    t0: float = 0.1
    patch_radius: int = 7
    bright_fraction: float = 0.001
    gf_radius: int = 20
    gf_eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not 0.0 < self.t0 < 1.0:
            raise ValueError("t0 must lie in (0, 1)")
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1")
        if not 0.0 < self.bright_fraction <= 1.0:
            raise ValueError("bright_fraction must lie in (0, 1]")
        if self.gf_radius < 1 or self.gf_eps <= 0:
            raise ValueError("guided filter needs radius >= 1 and eps > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def dark_channel(img, radius: int) -> np.ndarray:
    """Channel minimum followed by a (2r+1)^2 window minimum."""
    rgb = require_rgb(img)
    return minimum_filter(rgb.min(axis=2), size=2 * radius + 1, mode="nearest")


def estimate_airlight(img, dark, bright_fraction: float) -> np.ndarray:
    """Brightest input pixel among the top ``bright_fraction`` of the dark channel."""
    rgb = require_rgb(img)
    dark = np.asarray(dark, dtype=np.float64)
    if dark.shape != rgb.shape[:2]:
        raise ValueError("dark channel does not match the image")
    if bright_fraction <= 0:
        raise ValueError("bright_fraction must be positive")
    flat_dark = dark.ravel()
    k = min(flat_dark.size, math.ceil(bright_fraction * flat_dark.size))
    # Stable descending order; ties resolved towards the lower flat index.
    candidates = np.argsort(-flat_dark, kind="stable")[:k]
    lum = luminance(rgb).ravel()[candidates]
    best = candidates[int(np.argmax(lum))]
    return np.maximum(rgb.reshape(-1, 3)[best], AIRLIGHT_FLOOR)


def estimate_transmission(img, airlight, omega: float, radius: int) -> np.ndarray:
    rgb = require_rgb(img)
    a = np.asarray(airlight, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("airlight components must be positive")
    return 1.0 - omega * dark_channel(rgb / a, radius)


def box_mean(x, radius: int) -> np.ndarray:
    return uniform_filter(np.asarray(x, dtype=np.float64), size=2 * radius + 1, mode="nearest")


def guided_filter(guide, src, radius: int, eps: float) -> np.ndarray:
    """Grey-guided filter; an RGB guide is reduced to luminance first."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim == 3:
        guide = luminance(guide)
    src = np.asarray(src, dtype=np.float64)
    if guide.shape != src.shape:
        raise ValueError(f"guide {guide.shape} and input {src.shape} differ")
    mean_i = box_mean(guide, radius)
    mean_p = box_mean(src, radius)
    cov_ip = box_mean(guide * src, radius) - mean_i * mean_p
    var_i = box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box_mean(a, radius) * guide + box_mean(b, radius)


def recover_radiance(img, airlight, t, t0: float, clamp: bool = True) -> np.ndarray:
    """Invert the scattering model: ``J = (I - A) / max(t, t0) + A``."""
    rgb = require_rgb(img)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != rgb.shape[:2]:
        raise ValueError("transmission map does not match the image")
    a = np.asarray(airlight, dtype=np.float64)
    out = (rgb - a) / np.maximum(t, t0)[:, :, None] + a
    return np.clip(out, 0.0, 1.0) if clamp else out


def global_stats_features(img) -> np.ndarray:
    """Mean, min, max and population variance of R, G, B, Y, U, V (24 values)."""
    rgb = require_rgb(img)
    chans = np.concatenate([rgb, rgb_to_yuv(rgb)], axis=2).reshape(-1, 6)
    stats = np.stack([chans.mean(0), chans.min(0), chans.max(0), chans.var(0)], axis=1)
    return stats.ravel()


def predict_omega(model: TreeEnsembleModel, feats) -> float:
    feats = np.asarray(feats, dtype=np.float64).ravel()
    if feats.size != model.feature_dim:
        raise ValueError(f"expected {model.feature_dim} features, got {feats.size}")
    return float(np.clip(model.predict(feats[None, :])[0], OMEGA_MIN, OMEGA_MAX))


def dehaze_dcp(img, params: DcpParams | None = None, omega_model: TreeEnsembleModel | None = None) -> np.ndarray:
    params = params or DcpParams()
    rgb = require_rgb(img)
    omega = params.omega
    if omega_model is not None:
        omega = predict_omega(omega_model, global_stats_features(rgb))
    dark = dark_channel(rgb, params.patch_radius)
    a = estimate_airlight(rgb, dark, params.bright_fraction)
    t = estimate_transmission(rgb, a, omega, params.patch_radius)
    t = guided_filter(rgb, t, params.gf_radius, params.gf_eps)
    return recover_radiance(rgb, a, t, params.t0)


def best_omega(clear, hazy, params: DcpParams | None = None, grid=OMEGA_GRID) -> float:
    """Grid value of omega whose DCP output has the highest PSNR against ``clear``.

    Ties go to the smaller omega.
    """
    params = params or DcpParams()
    hazy = require_rgb(hazy)
    dark = dark_channel(hazy, params.patch_radius)
    a = estimate_airlight(hazy, dark, params.bright_fraction)
    normalised_dark = dark_channel(hazy / a, params.patch_radius)
    best, best_score = grid[0], -np.inf
    for omega in grid:
        t = guided_filter(hazy, 1.0 - omega * normalised_dark, params.gf_radius, params.gf_eps)
        score = psnr(recover_radiance(hazy, a, t, params.t0), clear)
        if score > best_score:
            best, best_score = float(omega), score
    return best


def fit_omega_regressor(
    pairs,
    params: DcpParams | None = None,
    n_trees: int = 100,
    max_depth: int = 8,
    seed: int = 0,
    threads: int = 1,
    return_labels: bool = False,
):
    """Label each ``(clear, hazy)`` pair with its best grid omega and fit a forest.

    With ``return_labels`` the grid labels are returned alongside the model.
    """
    pairs = list(pairs)
    if len(pairs) < 10:
        raise ValueError(f"need at least 10 pairs to fit the omega regressor, got {len(pairs)}")
    labels = omega_labels(pairs, params, threads)
    feats = np.stack([global_stats_features(h) for _, h in pairs])
    model = fit_random_forest(feats, labels, n_trees=n_trees, max_depth=max_depth, seed=seed)
    return (model, labels) if return_labels else model


def omega_labels(pairs, params: DcpParams | None = None, threads: int = 1) -> np.ndarray:
    work = lambda pair: best_omega(pair[0], pair[1], params)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.array(list(pool.map(work, pairs)))
    return np.array([work(p) for p in pairs])
