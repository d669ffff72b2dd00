"""Versioned, checksummed model container.

Layout (UTF-8 text)::

    GUSLDH
    version 1
    manifest dcp-params omega-forest saab-cascade level-0 ...
    section <name> <byte length>
    <JSON body>
    ...
    checksum sha256 <hex digest of every preceding byte>

Reals are written as decimal strings with 17 significant digits so that a
load reproduces every double bit for bit. Trees are stored as preorder
token streams: ``S <feature> <threshold>`` for splits, ``L <weight>`` for
leaves.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dcp import DcpParams
from .lnt import LNTTransform
from .saab import HopConfig, SaabBank, SaabCascade
from .trees import Tree, TreeEnsembleModel
from .ushape import FORMAT_VERSION, LevelModel, UShapeModel

MAGIC = "GUSLDH"


class ModelFormatError(Exception):
    """Base class for unreadable model files."""


class ChecksumError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TruncatedError(ModelFormatError):
    pass


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _arr(a) -> dict:
    a = np.asarray(a)
    if a.dtype.kind in "iub":
        data = " ".join(str(int(v)) for v in a.ravel())
        kind = "i8"
    else:
        data = " ".join(_f(v) for v in a.ravel())
        kind = "f8"
    return {"shape": list(a.shape), "dtype": kind, "data": data}


def _unarr(d: dict) -> np.ndarray:
    dtype = np.int64 if d["dtype"] == "i8" else np.float64
    tokens = d["data"].split()
    conv = int if dtype is np.int64 else float
    return np.array([conv(t) for t in tokens], dtype=dtype).reshape(d["shape"])


def tree_to_tokens(tree: Tree) -> str:
    out = []
    stack = [0]
    while stack:
        nd = stack.pop()
        if tree.feature[nd] < 0:
            out.append(f"L {_f(tree.value[nd])}")
        else:
            out.append(f"S {int(tree.feature[nd])} {_f(tree.threshold[nd])}")
            stack.append(int(tree.right[nd]))
            stack.append(int(tree.left[nd]))
    return " ".join(out)


def tree_from_tokens(text: str) -> Tree:
    tok = text.split()
    feature, threshold, left, right, value = [], [], [], [], []
    pos = 0

    def node() -> int:
        nonlocal pos
        if pos >= len(tok):
            raise ModelFormatError("truncated tree record")
        idx = len(feature)
        kind = tok[pos]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if kind == "L":
            value[idx] = float(tok[pos + 1])
            pos += 2
        elif kind == "S":
            feature[idx] = int(tok[pos + 1])
            threshold[idx] = float(tok[pos + 2])
            pos += 3
            left[idx] = node()
            right[idx] = node()
        else:
            raise ModelFormatError(f"bad tree token {kind!r}")
        return idx

    node()
    if pos != len(tok):
        raise ModelFormatError("trailing tokens in tree record")
    return Tree(
        np.array(feature, np.int64), np.array(threshold), np.array(left, np.int64),
        np.array(right, np.int64), np.array(value),
    )


def ensemble_to_dict(m: TreeEnsembleModel) -> dict:
    return {
        "mode": m.mode,
        "base_score": _f(m.base_score),
        "eta": _f(m.eta),
        "feature_dim": m.feature_dim,
        "trees": [tree_to_tokens(t) for t in m.trees],
    }


def ensemble_from_dict(d: dict) -> TreeEnsembleModel:
    return TreeEnsembleModel(
        d["mode"], [tree_from_tokens(t) for t in d["trees"]], float(d["base_score"]),
        float(d["eta"]), int(d["feature_dim"]),
    )


def _hop_to_dict(cfg: HopConfig, bank: SaabBank) -> dict:
    kept = cfg.kept
    return {
        "config": {
            "window": cfg.window, "filter": cfg.filter, "pool": cfg.pool,
            "kept": kept if isinstance(kept, int) else _f(kept),
            "kept_kind": "count" if isinstance(kept, int) else "energy",
            "max_fit_patches": cfg.max_fit_patches,
        },
        "bank": {
            "spatial_size": bank.spatial_size,
            "in_channels": bank.in_channels,
            "dc_vector": _arr(bank.dc_vector),
            "ac_vectors": _arr(bank.ac_vectors),
            "biases": _arr(bank.biases),
            "energies": _arr(bank.energies),
            "dc_variance": _f(bank.dc_variance),
        },
    }


def _hop_from_dict(d: dict) -> tuple[HopConfig, SaabBank]:
    c = d["config"]
    kept = int(c["kept"]) if c["kept_kind"] == "count" else float(c["kept"])
    cfg = HopConfig(c["window"], c["filter"], c["pool"], kept, c["max_fit_patches"])
    b = d["bank"]
    ac = _unarr(b["ac_vectors"]).reshape(-1, len(_unarr(b["dc_vector"])))
    bank = SaabBank(
        b["spatial_size"], b["in_channels"], _unarr(b["dc_vector"]), ac,
        _unarr(b["biases"]), _unarr(b["energies"]), float(b["dc_variance"]),
    )
    return cfg, bank


def _lnt_to_dict(x: LNTTransform) -> dict:
    return {"a_matrix": _arr(x.a_matrix), "b_bias": _arr(x.b_bias), "x_mean": _arr(x.x_mean),
            "bin_edges": _arr(x.bin_edges)}


def _lnt_from_dict(d: dict) -> LNTTransform:
    return LNTTransform(_unarr(d["a_matrix"]), _unarr(d["b_bias"]), _unarr(d["x_mean"]), _unarr(d["bin_edges"]))


def _level_to_dict(level: LevelModel) -> dict:
    return {
        "resolution": level.resolution,
        "cascade_hop": level.cascade_hop,
        "band": [_f(v) for v in level.band],
        "channels": [
            {
                "rft_selected": _arr(np.asarray(level.rft_selected[c], np.int64)),
                "lnt": _lnt_to_dict(level.lnt[c]),
                "regressor_raw": ensemble_to_dict(level.regressor_raw[c]),
                "regressor_lnt": ensemble_to_dict(level.regressor_lnt[c]),
                "blend": _f(level.blend[c]),
                "gate": _f(level.gate[c]),
            }
            for c in range(len(level.blend))
        ],
    }


def _level_from_dict(d: dict) -> LevelModel:
    level = LevelModel(d["resolution"], d["cascade_hop"], band=[float(v) for v in d["band"]])
    for ch in d["channels"]:
        level.rft_selected.append(_unarr(ch["rft_selected"]).reshape(-1))
        level.lnt.append(_lnt_from_dict(ch["lnt"]))
        level.regressor_raw.append(ensemble_from_dict(ch["regressor_raw"]))
        level.regressor_lnt.append(ensemble_from_dict(ch["regressor_lnt"]))
        level.blend.append(float(ch["blend"]))
        level.gate.append(float(ch["gate"]))
    return level


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def model_to_bytes(model: UShapeModel) -> bytes:
    sections = [
        ("dcp-params", {"input_size": model.input_size,
                        **{k: (_f(v) if isinstance(v, float) else v) for k, v in model.dcp_params.to_dict().items()}}),
        ("omega-forest", None if model.omega_model is None else ensemble_to_dict(model.omega_model)),
        ("saab-cascade", [_hop_to_dict(c, b) for c, b in model.cascade.hops]),
    ]
    sections += [(f"level-{i}", _level_to_dict(lv)) for i, lv in enumerate(model.levels)]
    head = f"{MAGIC}\nversion {model.version}\nmanifest {' '.join(n for n, _ in sections)}\n"
    parts = [head.encode()]
    for name, body in sections:
        raw = _dump(body).encode()
        parts.append(f"section {name} {len(raw)}\n".encode())
        parts.append(raw)
    payload = b"".join(parts)
    digest = hashlib.sha256(payload).hexdigest()
    return payload + f"checksum sha256 {digest}\n".encode()


def save_model(model: UShapeModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise TruncatedError("unexpected end of file")
    return buf[pos:end].decode("utf-8", errors="strict"), end + 1


def model_from_bytes(buf: bytes) -> UShapeModel:
    if not buf.startswith(MAGIC.encode() + b"\n"):
        raise ModelFormatError("not a model file (bad magic)")
    tail = buf.rfind(b"checksum ")
    if tail < 0 or not buf.endswith(b"\n"):
        raise TruncatedError("missing checksum trailer")
    payload = buf[:tail]
    try:
        algo, digest = buf[tail:].decode("ascii").split()[1:3]
    except (UnicodeDecodeError, ValueError) as exc:
        raise ChecksumError("unreadable checksum trailer") from exc
    if algo != "sha256" or hashlib.sha256(payload).hexdigest() != digest:
        raise ChecksumError("checksum mismatch: file is corrupt")

    pos = len(MAGIC) + 1
    line, pos = _readline(payload, pos)
    key, _, ver = line.partition(" ")
    if key != "version" or not ver.isdigit():
        raise ModelFormatError("missing version line")
    if int(ver) != FORMAT_VERSION:
        raise VersionError(f"model format version {ver} is not supported (expected {FORMAT_VERSION})")
    line, pos = _readline(payload, pos)
    if not line.startswith("manifest "):
        raise ModelFormatError("missing manifest")
    names = line.split()[1:]
    bodies = {}
    for name in names:
        line, pos = _readline(payload, pos)
        tag, sec, length = line.split()
        if tag != "section" or sec != name:
            raise ModelFormatError(f"expected section {name}, found {line!r}")
        n = int(length)
        if pos + n > len(payload):
            raise TruncatedError(f"section {name} is truncated")
        bodies[name] = json.loads(payload[pos : pos + n].decode())
        pos += n
    if pos != len(payload):
        raise ModelFormatError("unexpected bytes after last section")

    dp = dict(bodies["dcp-params"])
    size = int(dp.pop("input_size"))
    params = DcpParams(**{k: (float(v) if isinstance(v, str) else v) for k, v in dp.items()})
    forest = bodies["omega-forest"]
    omega = None if forest is None else ensemble_from_dict(forest)
    cascade = SaabCascade([_hop_from_dict(h) for h in bodies["saab-cascade"]])
    levels = [_level_from_dict(bodies[n]) for n in names if n.startswith("level-")]
    return UShapeModel(size, levels, cascade, params, omega, int(ver))


def load_model(path) -> UShapeModel:
    return model_from_bytes(Path(path).read_bytes())
