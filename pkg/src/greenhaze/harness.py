"""Haze synthesis, paired datasets and benchmark scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import as_image, load_image, psnr, require_rgb, ssim


@dataclass
class HazeSpec:
    beta: float
    airlight: np.ndarray
    depth: np.ndarray | float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        self.airlight = np.asarray(self.airlight, dtype=np.float64).reshape(3)

    def transmission(self, shape) -> np.ndarray:
        depth = np.broadcast_to(np.asarray(self.depth, dtype=np.float64), shape)
        return np.exp(-self.beta * depth)


@dataclass
class Pair:
    clear: np.ndarray | None = None
    hazy: np.ndarray | None = None
    clear_path: str | None = None
    hazy_path: str | None = None
    beta: float | None = None
    airlight: np.ndarray | None = None
    depth: np.ndarray | None = None

    def images(self) -> tuple[np.ndarray, np.ndarray]:
        clear = self.clear if self.clear is not None else load_image(self.clear_path)
        hazy = self.hazy if self.hazy is not None else load_image(self.hazy_path)
        return clear, hazy


@dataclass
class PairSet:
    pairs: list[Pair]
    split: list[str] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if not self.split:
            self.split = ["train"] * len(self.pairs)
        if len(self.split) != len(self.pairs):
            raise ValueError("one split label per pair required")
        owner: dict[str, str] = {}
        for pair, name in zip(self.pairs, self.split):
            for p in (pair.clear_path, pair.hazy_path):
                if p is None:
                    continue
                if owner.setdefault(p, name) != name:
                    raise ValueError(f"{p} appears in splits {owner[p]!r} and {name!r}")

    def subset(self, name: str) -> list[Pair]:
        return [p for p, s in zip(self.pairs, self.split) if s == name]

    def with_splits(self, fractions: dict[str, float], seed: int | None = None) -> "PairSet":
        seed = self.seed if seed is None else seed
        return PairSet(self.pairs, assign_splits(len(self.pairs), fractions, seed), seed)


def assign_splits(n: int, fractions: dict[str, float], seed: int) -> list[str]:
    """Seeded split labels; counts are ``round(f * n)`` with the remainder to the first split."""
    names = list(fractions)
    counts = [int(round(fractions[k] * n)) for k in names]
    counts[0] += n - sum(counts)
    if counts[0] < 0:
        raise ValueError("split fractions exceed 1")
    labels = np.repeat(np.array(names, dtype=object), counts)
    perm = np.random.default_rng(seed).permutation(n)
    out = [""] * n
    for label, idx in zip(labels, perm):
        out[idx] = str(label)
    return out


def ramp_depth(h: int, w: int, near: float = 0.2, far: float = 1.0) -> np.ndarray:
    """Vertical ramp: far at the top row, near at the bottom."""
    rows = np.linspace(far, near, h) if h > 1 else np.array([far])
    return np.repeat(rows[:, None], w, axis=1)


def synthesize_haze(clear, spec: HazeSpec) -> np.ndarray:
    """``I = J t + A (1 - t)`` with ``t = exp(-beta d)``, clamped to [0, 1]."""
    rgb = require_rgb(clear)
    depth = np.asarray(spec.depth, dtype=np.float64)
    if depth.ndim == 2 and depth.shape != rgb.shape[:2]:
        raise ValueError(f"depth {depth.shape} does not match image {rgb.shape[:2]}")
    t = spec.transmission(rgb.shape[:2])[:, :, None]
    return np.clip(rgb * t + spec.airlight * (1.0 - t), 0.0, 1.0)


def sample_airlight(rng: np.random.Generator, lum_range=(0.7, 1.0), jitter: float = 0.05) -> np.ndarray:
    lum = rng.uniform(*lum_range)
    return np.clip(lum + rng.uniform(-jitter, jitter, 3), 0.05, 1.0)


def make_synthetic_set(clears, betas=(0.6, 1.8), airlights=(0.7, 1.0), seed: int = 0, depths=None) -> PairSet:
    """Hazy counterparts with recorded ``(beta, A)`` labels for each clear image."""
    clears = [require_rgb(c) for c in clears]
    if not clears:
        raise ValueError("need at least one clear image")
    rng = np.random.default_rng(seed)
    pairs = []
    for i, clear in enumerate(clears):
        beta = float(rng.uniform(*betas))
        a = sample_airlight(rng, airlights)
        depth = depths[i] if depths is not None else ramp_depth(*clear.shape[:2])
        hazy = synthesize_haze(clear, HazeSpec(beta, a, depth))
        pairs.append(Pair(clear, hazy, beta=beta, airlight=a, depth=depth))
    return PairSet(pairs, seed=seed)


def procedural_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """A synthetic outdoor-like RGB scene with saturated objects and shadows.

    Colourful, textured content keeps local channel minima near zero, the
    way haze-free outdoor photographs behave.
    """
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    sky = rng.uniform(0.45, 0.95, 3)
    ground = rng.uniform(0.05, 0.5, 3)
    horizon = rng.uniform(0.25, 0.55)
    blend = np.clip((yy - horizon) * 8.0, 0.0, 1.0)[:, :, None]
    img = sky * (1 - blend) + ground * blend

    for _ in range(rng.integers(6, 14)):
        colour = rng.uniform(0.0, 1.0, 3)
        colour[rng.integers(3)] *= 0.15
        cy, cx = rng.uniform(0.2, 1.0), rng.uniform(0.0, 1.0)
        ry, rx = rng.uniform(0.04, 0.25, 2)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 1.0 - 0.5 * np.clip((yy - cy) / (2 * ry) + 0.5, 0, 1)
        img = np.where(mask[:, :, None], colour * shade[:, :, None], img)

    texture = gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(1.5, 1.5, 0))
    img = img + 0.08 * texture / (texture.std() + 1e-12)
    shadows = gaussian_filter(rng.random((h, w)), sigma=size / 16) < 0.45
    img = np.where(shadows[:, :, None], img * 0.35, img)
    return np.clip(img, 0.0, 1.0)


def procedural_scenes(n: int, size: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [procedural_scene(size, rng) for _ in range(n)]


def write_manifest(pairs, path, header: str | None = None) -> None:
    lines = []
    if header:
        lines += [f"# {line}" for line in header.splitlines()]
    for p in pairs:
        fields = [str(p.clear_path), str(p.hazy_path)]
        if p.beta is not None:
            fields.append(format(p.beta, ".17g"))
            if p.airlight is not None:
                fields += [format(float(v), ".17g") for v in p.airlight]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[Pair]:
    """Parse a tab-separated manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3, 6):
            raise ValueError(f"{path}:{lineno}: expected 2, 3 or 6 tab-separated fields")
        clear, hazy = (str(p if Path(p).is_absolute() else base / p) for p in fields[:2])
        beta = float(fields[2]) if len(fields) >= 3 else None
        airlight = np.array([float(v) for v in fields[3:6]]) if len(fields) == 6 else None
        pairs.append(Pair(clear_path=clear, hazy_path=hazy, beta=beta, airlight=airlight))
    return pairs


@dataclass
class ScoreReport:
    split: str
    model_psnr: list[float]
    model_ssim: list[float]
    dcp_psnr: list[float]
    dcp_ssim: list[float]
    hazy_psnr: list[float]
    hazy_ssim: list[float]

    def means(self) -> dict[str, float]:
        return {
            name: float(np.mean(getattr(self, name)))
            for name in ("model_psnr", "model_ssim", "dcp_psnr", "dcp_ssim", "hazy_psnr", "hazy_ssim")
        }

    def to_dict(self) -> dict:
        out = {"split": self.split, "n_images": len(self.model_psnr), "mean": self.means()}
        out["per_image"] = {
            name: [float(v) for v in getattr(self, name)]
            for name in ("model_psnr", "model_ssim", "dcp_psnr", "dcp_ssim", "hazy_psnr", "hazy_ssim")
        }
        return out


def evaluate(model, pairs, split: str = "test", threads: int = 1) -> ScoreReport:
    """PSNR/SSIM of the model, the DCP-only stage and the raw hazy input against clear."""
    from .ushape import infer, infer_dcp_only

    if isinstance(pairs, PairSet):
        pairs = pairs.subset(split)
    pairs = list(pairs)
    if not pairs:
        raise ValueError(f"split {split!r} is empty")

    def score(pair):
        clear, hazy = pair.images()
        clear, hazy = as_image(clear), as_image(hazy)
        out = infer(hazy, model)
        dcp = infer_dcp_only(hazy, model)
        return (psnr(out, clear), ssim(out, clear), psnr(dcp, clear), ssim(dcp, clear),
                psnr(hazy, clear), ssim(hazy, clear))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(score, pairs))
    else:
        rows = [score(p) for p in pairs]
    cols = list(zip(*rows))
    return ScoreReport(split, *[list(c) for c in cols])
