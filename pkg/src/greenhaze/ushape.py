"""Coarse-to-fine residual regression on top of the DCP stage.

Levels run coarse to fine. Each level predicts, per colour channel, the
residual between the clear image at that resolution and the running
prediction upsampled from the coarser level. At the coarsest level the
running prediction is the downsampled DCP output. Whenever the prediction is
upsampled, the DCP output's own detail band for that step (what the pyramid
removed) may be added back; each level is fitted with and without it and the
variant closer to the clear validation images is kept. The final full-size
output always adds back the DCP band above the finest level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dcp import DcpParams, dehaze_dcp, fit_omega_regressor
from .imaging import as_image, require_rgb, resize
from .lnt import LNTTransform, apply_lnt_rows, make_level2
from .rft import DEFAULT_BINS, rft_select
from .saab import HopConfig, SaabCascade, apply_cascade, fit_cascade
from .trees import GbtParams, TreeEnsembleModel, count_parameters, fit_gbt

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLEND_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
N_RAW = 8  # 3 DCP channels + 3 coarse-prediction channels + (row, col)


@dataclass
class LevelModel:
    resolution: int
    cascade_hop: int
    rft_selected: list[np.ndarray] = field(default_factory=list)
    lnt: list[LNTTransform] = field(default_factory=list)
    regressor_raw: list[TreeEnsembleModel] = field(default_factory=list)
    regressor_lnt: list[TreeEnsembleModel] = field(default_factory=list)
    blend: list[float] = field(default_factory=list)
    gate: list[float] = field(default_factory=list)
    # Per channel weight (0 or 1) of the DCP detail band added to the
    # upsampled prediction; unused at the coarsest level.
    band: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def residual(self, channel: int, rows: np.ndarray) -> np.ndarray:
        """Blended residual prediction for assembled feature ``rows``."""
        b, g = self.blend[channel], self.gate[channel]
        if g == 0.0:
            return np.zeros(len(rows))
        raw = self.regressor_raw[channel].predict(rows)
        l2 = self.regressor_lnt[channel].predict(apply_lnt_rows(self.lnt[channel], rows))
        return g * (b * raw + (1.0 - b) * l2)


@dataclass
class UShapeModel:
    input_size: int
    levels: list[LevelModel]
    cascade: SaabCascade
    dcp_params: DcpParams
    omega_model: TreeEnsembleModel | None = None
    version: int = FORMAT_VERSION


@dataclass
class TrainConfig:
    input_size: int = 256
    levels: int = 3
    pixel_subsample: float = 0.25
    rft_keep: int = 1000
    # Alternative Saab feature counts tried per channel; the one with the lowest
    # validation MSE wins (ties go to fewer features). Empty: rft_keep only.
    rft_keep_candidates: tuple[int, ...] = ()
    rft_bins: int = DEFAULT_BINS
    rft_max_rows: int = 20000
    lnt_bins: int = 8
    gbt: GbtParams = field(default_factory=GbtParams)
    seed: int = 0
    val_fraction: float = 0.125
    learn_omega: bool = True
    omega_trees: int = 100
    hops: list[HopConfig] | None = None
    dcp: DcpParams = field(default_factory=DcpParams)
    ablation: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.pixel_subsample <= 1.0:
            raise ValueError("pixel_subsample must lie in (0, 1]")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.input_size % (2**self.levels):
            raise ValueError(f"input_size {self.input_size} not divisible by 2^{self.levels}")


@dataclass
class LevelStats:
    resolution: int
    train_mse: list[float]
    val_mse: list[float]
    blend: list[float]
    gate: list[float]
    ablation: dict[str, list[float]] = field(default_factory=dict)
    n_selected: list[int] = field(default_factory=list)


@dataclass
class TrainResult:
    model: UShapeModel
    stats: list[LevelStats]
    omega_labels: np.ndarray | None = None


def level_resolutions(input_size: int, levels: int) -> list[int]:
    """Fine to coarse: ``input_size / 2, ..., input_size / 2**levels``."""
    if input_size % (2**levels):
        raise ValueError(f"input_size {input_size} not divisible by 2^{levels}")
    return [input_size // 2**k for k in range(1, levels + 1)]


def build_pyramid(img, levels: int, input_size: int) -> list[np.ndarray]:
    """Repeated bilinear halving, ordered fine to coarse."""
    out = []
    cur = np.asarray(img, dtype=np.float64)
    if cur.shape[0] != input_size or cur.shape[1] != input_size:
        cur = resize(cur, input_size, input_size)
    for res in level_resolutions(input_size, levels):
        cur = resize(cur, res, res)
        out.append(cur)
    return out


def default_hop_configs(levels: int) -> list[HopConfig]:
    """Hop ``k`` feeds the level ``k`` steps below the finest one."""
    if levels == 1:
        return [HopConfig(7, 5, 1)]
    hops = [HopConfig(7, 5, 2)]
    hops += [HopConfig(5, 3, 2) for _ in range(levels - 2)]
    hops.append(HopConfig(3, 3, 1))
    return hops


def coordinate_planes(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    c = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    return np.broadcast_to(r[:, None], (h, w)), np.broadcast_to(c[None, :], (h, w))


def assemble_features(selected, hop_tensor, dcp_out, coarse_pred) -> np.ndarray:
    """Per-pixel rows: selected Saab coefficients, DCP RGB, coarse RGB, (row, col).

    ``selected`` is an index array, or a :class:`LevelModel` paired with a
    channel as ``(level, channel)``.
    """
    if isinstance(selected, tuple):
        level, channel = selected
        selected = level.rft_selected[channel]
    hop_tensor = np.asarray(hop_tensor, dtype=np.float64)
    dcp_out, coarse_pred = as_image(dcp_out), as_image(coarse_pred)
    h, w = hop_tensor.shape[:2]
    if dcp_out.shape[:2] != (h, w) or coarse_pred.shape[:2] != (h, w):
        raise ValueError(
            f"misaligned tensors: hop {hop_tensor.shape[:2]}, dcp {dcp_out.shape[:2]}, "
            f"coarse {coarse_pred.shape[:2]}"
        )
    rr, cc = coordinate_planes(h, w)
    parts = [
        hop_tensor[:, :, np.asarray(selected, dtype=np.intp)],
        dcp_out,
        coarse_pred,
        rr[:, :, None],
        cc[:, :, None],
    ]
    return np.concatenate(parts, axis=2).reshape(h * w, -1)


def _upsample(img: np.ndarray, res: int) -> np.ndarray:
    return resize(img, res, res)


def _band(dcp_pyr: list[np.ndarray], k: int) -> np.ndarray:
    """DCP detail present at level ``k`` but lost by upsampling from level ``k + 1``."""
    res = dcp_pyr[k].shape[0]
    return dcp_pyr[k] - _upsample(dcp_pyr[k + 1], res)


def _prepare(img, size: int) -> np.ndarray:
    img = require_rgb(img)
    if img.shape[:2] != (size, size):
        img = resize(img, size, size)
    return img


def _best_blend(raw_pred, lnt_pred, target):
    """Pick (blend, gate) minimising MSE; gate 0 means the level adds nothing."""
    best = (1.0, 0.0)
    best_err = float(np.mean(target**2))
    for b in BLEND_GRID:
        err = float(np.mean((b * raw_pred + (1.0 - b) * lnt_pred - target) ** 2))
        if err < best_err:
            best, best_err = (b, 1.0), err
    return best, best_err


def _map(fn, items, threads: int):
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def train_pipeline(pairs, cfg: TrainConfig | None = None, omega_model: TreeEnsembleModel | None = None) -> TrainResult:
    """Train the full model on ``(hazy, clear)`` image pairs."""
    cfg = cfg or TrainConfig()
    pairs = list(pairs)
    if len(pairs) < 8:
        raise ValueError(f"need at least 8 training pairs, got {len(pairs)}")
    size = cfg.input_size
    hazy = [_prepare(h, size) for h, _ in pairs]
    clear = [_prepare(c, size) for _, c in pairs]
    n_img = len(pairs)
    rng = np.random.default_rng(cfg.seed)

    labels = None
    if omega_model is None and cfg.learn_omega and n_img >= 10:
        omega_model, labels = fit_omega_regressor(
            list(zip(clear, hazy)), cfg.dcp, n_trees=cfg.omega_trees, seed=cfg.seed,
            threads=cfg.threads, return_labels=True,
        )
    dcp_full = _map(lambda h: dehaze_dcp(h, cfg.dcp, omega_model), hazy, cfg.threads)

    res_fine_to_coarse = level_resolutions(size, cfg.levels)
    dcp_pyr = [build_pyramid(d, cfg.levels, size) for d in dcp_full]
    clear_pyr = [build_pyramid(c, cfg.levels, size) for c in clear]

    hops = cfg.hops if cfg.hops is not None else default_hop_configs(cfg.levels)
    if len(hops) != cfg.levels:
        raise ValueError("need one hop per level")
    cascade = fit_cascade([p[0] for p in dcp_pyr], hops, seed=cfg.seed)
    hop_out = [apply_cascade(p[0], cascade) for p in dcp_pyr]

    n_val = int(round(cfg.val_fraction * n_img)) if n_img > 1 else 0
    perm = rng.permutation(n_img)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    if len(val_idx) == 0:
        val_idx = train_idx

    model = UShapeModel(size, [], cascade, cfg.dcp, omega_model)
    stats: list[LevelStats] = []
    running = None
    for k in reversed(range(cfg.levels)):
        res = res_fine_to_coarse[k]
        n_px = res * res
        n_rows = max(1, int(round(cfg.pixel_subsample * n_px)))
        pick = {i: np.sort(rng.choice(n_px, n_rows, replace=False)) for i in range(n_img)}
        rft_seed = int(rng.integers(0, 2**31 - 1))
        clear_k = [clear_pyr[i][k] for i in range(n_img)]
        data = (k, dcp_pyr, hop_out, clear_k, pick, rft_seed, train_idx, val_idx, cfg)
        if running is None:
            level, lstats, new_running = _fit_level([dcp_pyr[i][k] for i in range(n_img)], [0.0] * 3, data)
        else:
            # Fit once without and once with the DCP detail band in the base;
            # keep whichever ends closer to the clear validation images.
            up = [_upsample(r, res) for r in running]
            bands = [_band(dcp_pyr[i], k) for i in range(n_img)]
            best = None
            for w in (0.0, 1.0):
                fit = _fit_level([u + w * b for u, b in zip(up, bands)], [w] * 3, data)
                if best is None or sum(fit[1].val_mse) < sum(best[1].val_mse):
                    best = fit
            level, lstats, new_running = best
        model.levels.append(level)
        stats.append(lstats)
        log.info("level %d: band %s val mse %s blend %s", res, level.band, lstats.val_mse, lstats.blend)
        running = new_running
    return TrainResult(model, stats, labels)


def _fit_level(base, band, data):
    """Train the three channels of one level on top of ``base``."""
    k, dcp_pyr, hop_out, clear_k, pick, rft_seed, train_idx, val_idx, cfg = data
    n_img = len(base)
    res = base[0].shape[0]
    level = LevelModel(res, k, band=list(band))
    lstats = LevelStats(res, [], [], [], [])
    rng = np.random.default_rng(rft_seed)
    n_saab = hop_out[0][k].shape[2]
    full_rows = [assemble_features(np.arange(n_saab), hop_out[i][k], dcp_pyr[i][k], base[i]) for i in range(n_img)]
    new_running = [b.copy() for b in base]
    for ch in range(3):
        target_img = [clear_k[i][:, :, ch] - base[i][:, :, ch] for i in range(n_img)]

        def rows_of(idx, subsample=True):
            X = np.concatenate([full_rows[i][pick[i]] if subsample else full_rows[i] for i in idx])
            y = np.concatenate([target_img[i].ravel()[pick[i] if subsample else slice(None)] for i in idx])
            return X, y

        # Training rows are subsampled; validation scores every pixel.
        X_tr, y_tr = rows_of(train_idx)
        X_va, y_va = rows_of(val_idx, subsample=False)
        keeps = sorted({min(n, n_saab) for n in (cfg.rft_keep, *cfg.rft_keep_candidates)})
        rft_rows = np.arange(len(y_tr))
        if len(rft_rows) > cfg.rft_max_rows:
            rft_rows = np.sort(rng.choice(len(y_tr), cfg.rft_max_rows, replace=False))
        ranking = rft_select(X_tr[rft_rows, :n_saab], y_tr[rft_rows], keeps[-1], cfg.rft_bins).ranking
        best = None
        for keep in keeps:
            fit = _fit_channel(np.sort(ranking[:keep]), n_saab, X_tr, y_tr, X_va, y_va, cfg)
            if best is None or fit[-1] < best[-1]:
                best = fit
        selected, cols, L1_tr, xform, reg_raw, reg_lnt, (b, g), val_err = best
        L1_va = X_va[:, cols]

        level.rft_selected.append(selected)
        level.lnt.append(xform)
        level.regressor_raw.append(reg_raw)
        level.regressor_lnt.append(reg_lnt)
        level.blend.append(b)
        level.gate.append(g)
        lstats.blend.append(b)
        lstats.gate.append(g)
        lstats.val_mse.append(val_err)
        lstats.n_selected.append(len(selected))
        tr_pred = level.residual(ch, L1_tr)
        lstats.train_mse.append(float(np.mean((tr_pred - y_tr) ** 2)))

        if cfg.ablation:
            _ablate(lstats, cfg, L1_tr, y_tr, L1_va, y_va, len(selected))

        for i in range(n_img):
            rows = full_rows[i][:, cols]
            new_running[i][:, :, ch] = base[i][:, :, ch] + level.residual(ch, rows).reshape(res, res)
    return level, lstats, new_running


def _fit_channel(selected, n_saab, X_tr, y_tr, X_va, y_va, cfg: TrainConfig):
    """Fit both regressors for one choice of Saab columns and pick the blend."""
    cols = np.concatenate([selected, n_saab + np.arange(N_RAW)]).astype(np.intp)
    L1_tr, L1_va = X_tr[:, cols], X_va[:, cols]
    xform, _ = _fit_level2(L1_tr, y_tr, cfg.lnt_bins)
    L2_tr, L2_va = apply_lnt_rows(xform, L1_tr), apply_lnt_rows(xform, L1_va)
    reg_raw = fit_gbt(L1_tr, y_tr, cfg.gbt)
    reg_lnt = fit_gbt(L2_tr, y_tr, cfg.gbt)
    (b, g), val_err = _best_blend(reg_raw.predict(L1_va), reg_lnt.predict(L2_va), y_va)
    return selected, cols, L1_tr, xform, reg_raw, reg_lnt, (b, g), val_err


def _fit_level2(L1_rows: np.ndarray, y: np.ndarray, bins: int):
    n_distinct = np.unique(y).size
    m = min(bins, n_distinct)
    if m < 2:
        # Constant target: a zero projection stands in for the Level-2 map.
        n = L1_rows.shape[1]
        xf = LNTTransform(np.zeros((bins, n)), np.zeros(bins), L1_rows.mean(axis=0), np.arange(bins + 1.0))
        return xf, None
    return make_level2(L1_rows.T, y, m)


def _ablate(lstats: LevelStats, cfg: TrainConfig, L1_tr, y_tr, L1_va, y_va, n_sel: int) -> None:
    """Validation MSE of the three feature configurations for this channel."""
    raw_cols = np.arange(n_sel, n_sel + N_RAW)
    raw_model = fit_gbt(L1_tr[:, raw_cols], y_tr, cfg.gbt)
    raw_err = float(np.mean((raw_model.predict(L1_va[:, raw_cols]) - y_va) ** 2))
    saab_cols = np.arange(n_sel)
    if n_sel:
        xf, _ = _fit_level2(L1_tr[:, saab_cols], y_tr, cfg.lnt_bins)
        gen_tr = np.hstack([L1_tr[:, saab_cols], apply_lnt_rows(xf, L1_tr[:, saab_cols])])
        gen_va = np.hstack([L1_va[:, saab_cols], apply_lnt_rows(xf, L1_va[:, saab_cols])])
        gen_model = fit_gbt(gen_tr, y_tr, cfg.gbt)
        gen_err = float(np.mean((gen_model.predict(gen_va) - y_va) ** 2))
    else:
        gen_err = float(np.mean(y_va**2))
    lstats.ablation.setdefault("raw", []).append(raw_err)
    lstats.ablation.setdefault("l1_l2", []).append(gen_err)
    lstats.ablation.setdefault("raw_l1_l2", []).append(lstats.val_mse[-1])


def _dcp_stage(img, model: UShapeModel) -> tuple[np.ndarray, np.ndarray]:
    src = require_rgb(img)
    x = _prepare(src, model.input_size)
    return src, dehaze_dcp(x, model.dcp_params, model.omega_model)


def infer_levels(img, model: UShapeModel) -> dict:
    """Inference with every intermediate kept, for inspection and tests."""
    if not model.levels:
        raise ValueError("model has no trained levels")
    src, dcp_full = _dcp_stage(img, model)
    n_levels = len(model.levels)
    dcp_pyr = build_pyramid(dcp_full, n_levels, model.input_size)
    hop_out = apply_cascade(dcp_pyr[0], model.cascade)
    bases, bands, residuals, running = [], [], [], None
    for level in model.levels:
        k = level.cascade_hop
        res = level.resolution
        band = np.zeros_like(dcp_pyr[k]) if running is None else np.asarray(level.band) * _band(dcp_pyr, k)
        base = dcp_pyr[k] if running is None else _upsample(running, res) + band
        resid = np.zeros_like(base)
        for ch in range(3):
            rows = assemble_features((level, ch), hop_out[k], dcp_pyr[k], base)
            resid[:, :, ch] = level.residual(ch, rows).reshape(res, res)
        running = base + resid
        bases.append(base)
        bands.append(band)
        residuals.append(resid)
    size = model.input_size
    detail = dcp_full - _upsample(dcp_pyr[0], size)
    full = np.clip(_upsample(running, size) + detail, 0.0, 1.0)
    h, w = src.shape[:2]
    out = full if (h, w) == (size, size) else np.clip(resize(full, h, w), 0.0, 1.0)
    return {"dcp": dcp_full, "bases": bases, "bands": bands, "residuals": residuals, "finest": running,
            "detail": detail, "output": out}


def infer(img, model: UShapeModel) -> np.ndarray:
    return infer_levels(img, model)["output"]


def infer_dcp_only(img, model: UShapeModel) -> np.ndarray:
    """The model's DCP stage alone, returned at the input's original size."""
    src, dcp_full = _dcp_stage(img, model)
    h, w = src.shape[:2]
    if (h, w) == dcp_full.shape[:2]:
        return dcp_full
    return np.clip(resize(dcp_full, h, w), 0.0, 1.0)


def report_parameters(model: UShapeModel) -> dict:
    """Parameter counts per level and component, plus totals."""
    saab = 0
    for cfg, bank in model.cascade.hops:
        saab += bank.dc_vector.size + bank.ac_vectors.size + bank.biases.size
    levels = []
    for level in model.levels:
        rft = sum(len(s) for s in level.rft_selected)
        lnt = sum(x.a_matrix.size + x.bin_edges.size for x in level.lnt)
        trees = sum(count_parameters(m) for m in level.regressor_raw + level.regressor_lnt)
        levels.append({"resolution": level.resolution, "rft": rft, "lnt": lnt, "trees": trees,
                       "blend": len(level.blend), "total": rft + lnt + trees + len(level.blend)})
    omega = count_parameters(model.omega_model) if model.omega_model is not None else 0
    total = saab + omega + sum(l["total"] for l in levels)
    return {"saab": saab, "omega_forest": omega, "levels": levels, "total": total}
