"""Saab transform and multi-hop PixelHop cascades.

A Saab bank projects each flattened patch ``v`` onto a constant DC kernel
and a set of AC kernels obtained by PCA of the DC-removed residual, then
adds a per-kernel bias: ``z_k = u_k . v + c_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Relative eigenvalue level below which an AC direction counts as empty.
_EIG_TOL = 1e-12


@dataclass
class SaabBank:
    spatial_size: int
    in_channels: int
    dc_vector: np.ndarray
    ac_vectors: np.ndarray  # (n_ac, dim), orthonormal rows
    biases: np.ndarray  # (1 + n_ac,), DC bias first
    energies: np.ndarray  # (n_ac,), fraction of residual variance per AC kernel
    dc_variance: float = 0.0

    @property
    def dim(self) -> int:
        return self.spatial_size * self.spatial_size * self.in_channels

    @property
    def n_filters(self) -> int:
        return 1 + len(self.ac_vectors)

    @property
    def kernels(self) -> np.ndarray:
        """All kernels stacked, DC first: shape ``(n_filters, dim)``."""
        return np.vstack([self.dc_vector[None, :], self.ac_vectors])

    def project(self, patches) -> np.ndarray:
        """Bias-free responses ``u_k . v`` for each patch row."""
        v = np.asarray(patches, dtype=np.float64)
        dc = v @ self.dc_vector
        # AC kernels are orthogonal to the constant vector, so shifting a
        # patch by one of its own entries leaves their response unchanged
        # while making flat patches respond with an exact zero.
        ac = (v - v[:, :1]) @ self.ac_vectors.T
        return np.column_stack([dc, ac])

    def transform(self, patches) -> np.ndarray:
        return self.project(patches) + self.biases


@dataclass
class HopConfig:
    window: int = 7
    filter: int = 5
    pool: int = 1
    kept: float = 0.98  # int >= 1: total kernels incl. DC; float < 1: AC energy threshold
    max_fit_patches: int = 40000

    def __post_init__(self):
        if self.filter > self.window:
            raise ValueError("filter size must not exceed the window size")
        if self.pool not in (1, 2):
            raise ValueError("pool must be 1 or 2")
        if self.filter % 2 != 1:
            raise ValueError("filter size must be odd")


@dataclass
class SaabCascade:
    hops: list[tuple[HopConfig, SaabBank]] = field(default_factory=list)


def default_hops() -> list[HopConfig]:
    return [HopConfig(7, 5, 2), HopConfig(5, 3, 2), HopConfig(3, 3, 1)]


def extract_patches(tensor, m: int, stride: int = 1) -> np.ndarray:
    """Every valid ``m x m x C`` window flattened row-major, channel-minor."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    h, w, c = t.shape
    if m > min(h, w):
        raise ValueError(f"window {m} larger than tensor {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    win = sliding_window_view(t, (m, m), axis=(0, 1))[::stride, ::stride]
    # (H', W', C, m, m) -> (H', W', m, m, C)
    win = win.transpose(0, 1, 3, 4, 2)
    return win.reshape(-1, m * m * c)


def _n_ac_to_keep(eigvals: np.ndarray, total: float, kept, dim: int) -> int:
    nonzero = int(np.sum(eigvals > _EIG_TOL * max(total, 1e-300))) if total > 0 else 0
    if isinstance(kept, (int, np.integer)) and not isinstance(kept, bool):
        if kept < 1 or kept > dim:
            raise ValueError(f"kept must lie in [1, {dim}], got {kept}")
        return min(int(kept) - 1, nonzero)
    kept = float(kept)
    if not 0.0 < kept <= 1.0:
        raise ValueError("energy threshold must lie in (0, 1]")
    if nonzero == 0:
        return 0
    cum = np.cumsum(eigvals[:nonzero]) / total
    return min(int(np.searchsorted(cum, kept - 1e-12) + 1), nonzero)


def fit_saab(patches, kept=0.98, spatial_size: int | None = None, in_channels: int | None = None) -> SaabBank:
    """Fit a Saab bank on patch rows.

    ``kept`` is either the total number of kernels (an int, DC included) or a
    cumulative AC energy threshold (a float in (0, 1]).
    """
    v = np.asarray(patches, dtype=np.float64)
    if v.ndim != 2 or len(v) < 2:
        raise ValueError("need at least 2 patches")
    dim = v.shape[1]
    if spatial_size is None:
        spatial_size, in_channels = int(round(np.sqrt(dim))), 1
        if spatial_size * spatial_size != dim:
            spatial_size, in_channels = 1, dim
    elif in_channels is None:
        in_channels = dim // (spatial_size * spatial_size)
    if spatial_size * spatial_size * in_channels != dim:
        raise ValueError("patch width does not match spatial_size and in_channels")

    dc_vector = np.full(dim, 1.0 / np.sqrt(dim))
    dc = v @ dc_vector
    resid = v - v.mean(axis=1, keepdims=True)
    resid = resid - resid.mean(axis=0)
    cov = resid.T @ resid / len(v)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
    eigvals = np.maximum(eigvals, 0.0)
    total = float(np.trace(cov))

    n_ac = _n_ac_to_keep(eigvals, total, kept, dim)
    ac = eigvecs[:, :n_ac].T.copy()
    if n_ac:
        # Re-orthogonalise against DC to wash out eigensolver round-off.
        ac -= np.outer(ac @ dc_vector, dc_vector)
        q, _ = np.linalg.qr(ac.T)
        ac = q.T * np.sign(np.sum(q.T * ac, axis=1, keepdims=True))
        pivot = np.argmax(np.abs(ac), axis=1)
        ac *= np.sign(ac[np.arange(n_ac), pivot])[:, None]
    energies = eigvals[:n_ac] / total if total > 0 else np.zeros(0)

    bank = SaabBank(
        spatial_size, in_channels, dc_vector, ac, np.zeros(1 + n_ac), energies,
        dc_variance=float(np.var(dc)),
    )
    responses = bank.project(v)
    bank.biases = np.maximum(0.0, -responses.min(axis=0))
    return bank


def apply_saab(tensor, bank: SaabBank, stride: int = 1) -> np.ndarray:
    """Valid-window Saab responses, shape ``(H', W', n_filters)``."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    if t.shape[2] != bank.in_channels:
        raise ValueError(f"bank expects {bank.in_channels} channels, got {t.shape[2]}")
    m = bank.spatial_size
    h_out = (t.shape[0] - m) // stride + 1
    w_out = (t.shape[1] - m) // stride + 1
    z = bank.transform(extract_patches(t, m, stride))
    return z.reshape(h_out, w_out, bank.n_filters)


def max_pool(tensor, factor: int = 2) -> np.ndarray:
    t = np.asarray(tensor)
    h, w = t.shape[:2]
    if factor != 2:
        raise ValueError("only 2x2 pooling is supported")
    if h % 2 or w % 2:
        raise ValueError(f"max_pool needs even spatial dims, got {h}x{w}")
    return t.reshape(h // 2, 2, w // 2, 2, *t.shape[2:]).max(axis=(1, 3))


def _pad_same(t: np.ndarray, m: int) -> np.ndarray:
    r = m // 2
    return np.pad(t, ((r, r), (r, r), (0, 0)), mode="edge")


def _hop_forward(t: np.ndarray, cfg: HopConfig, bank: SaabBank):
    out = apply_saab(_pad_same(t, cfg.filter), bank)
    pooled = max_pool(out) if cfg.pool == 2 else out
    return out, pooled


def fit_cascade(images, configs=None, seed: int = 0) -> SaabCascade:
    """Fit hop by hop; hop ``i+1`` learns from the pooled outputs of hop ``i``.

    Each hop fits on at most ``max_fit_patches`` valid windows drawn with a
    seeded generator.
    """
    configs = list(configs) if configs is not None else default_hops()
    tensors = [np.asarray(im, dtype=np.float64) for im in images]
    tensors = [t[:, :, None] if t.ndim == 2 else t for t in tensors]
    if not tensors:
        raise ValueError("need at least one image")
    rng = np.random.default_rng(seed)
    cascade = SaabCascade()
    for cfg in configs:
        channels = tensors[0].shape[2]
        if any(t.shape[2] != channels for t in tensors):
            raise ValueError("incompatible hop chain: channel counts differ")
        patches = np.concatenate([extract_patches(t, cfg.filter) for t in tensors])
        if len(patches) > cfg.max_fit_patches:
            patches = patches[np.sort(rng.choice(len(patches), cfg.max_fit_patches, replace=False))]
        kept = cfg.kept
        if isinstance(kept, (int, np.integer)) and kept > patches.shape[1]:
            raise ValueError(f"incompatible hop chain: kept {kept} > patch dim {patches.shape[1]}")
        bank = fit_saab(patches, kept, cfg.filter, channels)
        cascade.hops.append((cfg, bank))
        tensors = [_hop_forward(t, cfg, bank)[1] for t in tensors]
    return cascade


def apply_cascade(img, cascade: SaabCascade) -> list[np.ndarray]:
    """Pre-pool output of every hop, each at its hop's input resolution."""
    t = np.asarray(img, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    outs = []
    for cfg, bank in cascade.hops:
        if min(t.shape[:2]) < 1 or (cfg.pool == 2 and (t.shape[0] % 2 or t.shape[1] % 2)):
            raise ValueError(f"image too small or oddly sized for the cascade at {t.shape[:2]}")
        out, t = _hop_forward(t, cfg, bank)
        outs.append(out)
    return outs
