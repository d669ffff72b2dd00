"""Image buffers, IO, colour conversion, resampling and quality metrics.

Images are plain ``numpy`` arrays of dtype float64 with shape ``(H, W, C)``,
``C`` in {1, 3}, holding intensities in [0, 1]. Scalar maps (transmission,
dark channel, depth) are ``(H, W)`` arrays. Quantisation to 8 bits only
happens in :func:`save_image`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

PSNR_SENTINEL = 99.0

# BT.601 luma weights; chroma scaled so U, V span [-0.5, 0.5] before offset.
KR, KB = 0.299, 0.114
KG = 1.0 - KR - KB
U_SCALE = 0.5 / (1.0 - KB)
V_SCALE = 0.5 / (1.0 - KR)


def as_image(img, name: str = "image") -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(H, W, C)`` array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"{name} must have shape (H, W, 1) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} has a zero dimension")
    return arr


def require_rgb(img, name: str = "image") -> np.ndarray:
    arr = as_image(img, name)
    if arr.shape[2] != 3:
        raise ValueError(f"{name} must have 3 channels, got {arr.shape[2]}")
    return arr


def load_image(path) -> np.ndarray:
    """Read a PNG or JPEG file into an RGB (or single-channel) float image."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ValueError(f"{path}: unsupported format {im.format}")
            if im.mode in ("L", "I;16", "I", "1"):
                data = np.asarray(im.convert("L"))[:, :, None]
            else:
                data = np.asarray(im.convert("RGB"))
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    except UnidentifiedImageError as exc:
        raise ValueError(f"{path}: not a PNG or JPEG image") from exc
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ValueError(f"{path}: zero-dimension image")
    return data.astype(np.float64) / 255.0


def to_bytes(img) -> np.ndarray:
    """Clamp to [0, 1] and quantise with round-half-up to uint8."""
    arr = np.clip(as_image(img), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write ``img`` as an 8-bit PNG."""
    data = to_bytes(img)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    try:
        Image.fromarray(data).save(Path(path), format="PNG")
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _axis_weights(n_in: int, n_out: int):
    # Half-pixel centres; source coordinates clamped to the valid range.
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    lo = np.floor(x).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, x - lo


def _lerp(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a + w (b - a) is exact when a == b, so constants survive resampling.
    return a + w * (b - a)


def resize(img, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resampling of an image or scalar map to ``(new_h, new_w)``."""
    if new_h < 1 or new_w < 1:
        raise ValueError("target dimensions must be >= 1")
    arr = np.asarray(img, dtype=np.float64)
    scalar = arr.ndim == 2
    if scalar:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("cannot resize an empty image")
    lo, hi, wy = _axis_weights(h, new_h)
    rows = _lerp(arr[lo], arr[hi], wy[:, None, None])
    lo, hi, wx = _axis_weights(w, new_w)
    out = _lerp(rows[:, lo], rows[:, hi], wx[None, :, None])
    return out[:, :, 0] if scalar else out


def rgb_to_yuv(img) -> np.ndarray:
    """BT.601 YUV with U and V offset by +0.5 into the unit interval."""
    rgb = require_rgb(img)
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    # Written in channel differences so that gray pixels give Y == v and
    # chroma == 0.5 with no rounding residue.
    y = g + KR * (r - g) + KB * (b - g)
    u = 0.5 + U_SCALE * (KR * (b - r) + KG * (b - g))
    v = 0.5 + V_SCALE * (KG * (r - g) + KB * (r - b))
    return np.stack([y, u, v], axis=2)


def luminance(img) -> np.ndarray:
    """Y channel of :func:`rgb_to_yuv`; single-channel input is returned as is."""
    arr = as_image(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    r, g, b = arr[:, :, 0], arr[:, :, 1], arr[:, :, 2]
    return g + KR * (r - g) + KB * (b - g)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; 99.0 for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_SENTINEL
    return float(-10.0 * np.log10(err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half : x.shape[0] - half, half : x.shape[1] - half]


def ssim(a, b, k1: float = 0.01, k2: float = 0.03, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, on luminance for RGB input."""
    a, b = as_image(a, "a"), as_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < win_size:
        raise ValueError(f"image smaller than the {win_size}x{win_size} window")
    x, y = luminance(a), luminance(b)
    g = gaussian_window(win_size, sigma)
    c1, c2 = k1**2, k2**2

    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y

    num = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
