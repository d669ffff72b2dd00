"""Command-line entry point: ``greenhaze {synth,train,dehaze,eval,inspect}``.

Exit codes: 0 success, 1 usage error, 2 IO error, 3 data or model integrity
error. Options may also come from a flat ``key=value`` file passed with
``--config``; keys are flag names (dashes or underscores) and explicit
flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .dcp import DcpParams, dehaze_dcp
from .harness import (
    Pair,
    PairSet,
    assign_splits,
    evaluate,
    make_synthetic_set,
    procedural_scenes,
    read_manifest,
    write_manifest,
)
from .imaging import load_image, save_image
from .modelio import ModelFormatError, load_model, save_model
from .trees import GbtParams
from .ushape import TrainConfig, infer, level_resolutions, report_parameters, train_pipeline

log = logging.getLogger("greenhaze")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTEGRITY = 0, 1, 2, 3
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_split_flags(p):
    p.add_argument("--test-fraction", type=float, default=0.2,
                   help="share of manifest pairs held out as the test split (default 0.2)")


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="greenhaze", description="Green-learning single image dehazing.")
    parser.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    parser.add_argument("--config", help="key=value file with option defaults")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for per-image stages")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="synthesize hazy images and a manifest")
    p.add_argument("--input", help="directory of clear PNG/JPEG images")
    p.add_argument("--procedural", type=int, default=0,
                   help="generate this many procedural clear scenes instead of reading --input")
    p.add_argument("--size", type=int, default=128, help="side length of procedural scenes")
    p.add_argument("--output", required=True, help="directory for hazy images (and procedural clears)")
    p.add_argument("--manifest", help="manifest path (default OUTPUT/manifest.tsv)")
    p.add_argument("--beta-min", type=float, default=0.6)
    p.add_argument("--beta-max", type=float, default=1.8)
    p.add_argument("--airlight-min", type=float, default=0.7)
    p.add_argument("--airlight-max", type=float, default=1.0)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--size", type=int, default=256, help="training input size (default 256)")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--rounds", type=int, default=200, help="boosting rounds per regressor")
    p.add_argument("--eta", type=float, default=0.3)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--pixel-subsample", type=float, default=0.25)
    p.add_argument("--rft-keep", type=int, default=TrainConfig.rft_keep)
    p.add_argument("--rft-keep-candidates", type=_int_list, default=(),
                   help="comma-separated alternative Saab feature counts, chosen per channel on validation")
    p.add_argument("--val-fraction", type=float, default=0.125)
    p.add_argument("--no-omega", action="store_true", help="use the fixed omega instead of the regressor")
    p.add_argument("--ablation", action="store_true",
                   help="also report validation MSE of raw-only and L1+L2-only regressors")
    p.add_argument("--report", help="write training statistics as JSON")
    _add_split_flags(p)

    p = sub.add_parser("dehaze", help="dehaze one or more images")
    p.add_argument("images", nargs="+", help="input PNG/JPEG files")
    p.add_argument("--model", help="model file (optional with --dcp-only)")
    p.add_argument("--output", required=True,
                   help="output PNG path for a single input, otherwise an output directory")
    p.add_argument("--dcp-only", action="store_true", help="run only the dark channel stage")

    p = sub.add_parser("eval", help="score a model on a manifest split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--report", help="write per-image scores as JSON")
    _add_split_flags(p)

    p = sub.add_parser("inspect", help="print version and parameter counts of a model")
    p.add_argument("--model", required=True)
    return parser


def read_config(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key=value", EXIT_USAGE)
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, command: str, values: dict[str, str]) -> None:
    """Install config values as parser defaults so explicit flags still win."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    targets = [parser, sub.choices[command]]
    for key, raw in values.items():
        for p in targets:
            action = next((a for a in p._actions if a.dest == key), None)
            if action is None:
                continue
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except ValueError as exc:
                    raise CliError(f"config value {key}={raw!r}: {exc}", EXIT_USAGE) from exc
            else:
                value = raw
            p.set_defaults(**{key: value})
            break
        else:
            # Keys for other subcommands are allowed so one file can serve all.
            if not any(a.dest == key for p in sub.choices.values() for a in p._actions):
                raise CliError(f"unknown config key {key!r}", EXIT_USAGE)


def _load_pairs(path) -> list[Pair]:
    try:
        return read_manifest(path)
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INTEGRITY) from exc


def _split_pairs(pairs: list[Pair], args) -> PairSet:
    frac = args.test_fraction
    if not 0.0 <= frac < 1.0:
        raise CliError("--test-fraction must lie in [0, 1)", EXIT_USAGE)
    labels = assign_splits(len(pairs), {"train": 1.0 - frac, "test": frac}, args.seed)
    try:
        return PairSet(pairs, labels, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INTEGRITY) from exc


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read model {path}: {exc}", EXIT_IO) from exc
    except ModelFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INTEGRITY) from exc


def cmd_synth(args) -> int:
    out_dir = Path(args.output)
    if args.procedural > 0:
        clears = procedural_scenes(args.procedural, args.size, seed=args.seed)
        clear_dir = out_dir / "clear"
        clear_dir.mkdir(parents=True, exist_ok=True)
        clear_paths = [clear_dir / f"scene_{i:04d}.png" for i in range(len(clears))]
        for img, path in zip(clears, clear_paths):
            save_image(img, path)
        # Re-read so the hazy images derive from the stored 8-bit clears.
        clears = [load_image(p) for p in clear_paths]
    else:
        if not args.input:
            raise CliError("synth needs --input or --procedural", EXIT_USAGE)
        in_dir = Path(args.input)
        if not in_dir.is_dir():
            raise CliError(f"input directory {in_dir} does not exist", EXIT_IO)
        clear_paths = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not clear_paths:
            raise CliError(f"no images found in {in_dir}", EXIT_IO)
        clears = [load_image(p) for p in clear_paths]
        clears = [np.repeat(c, 3, axis=2) if c.shape[2] == 1 else c for c in clears]
    pset = make_synthetic_set(
        clears, (args.beta_min, args.beta_max), (args.airlight_min, args.airlight_max), seed=args.seed
    )
    hazy_dir = out_dir / "hazy"
    hazy_dir.mkdir(parents=True, exist_ok=True)
    manifest = Path(args.manifest) if args.manifest else out_dir / "manifest.tsv"
    entries = []
    for pair, cpath in zip(pset.pairs, clear_paths):
        hpath = hazy_dir / f"{Path(cpath).stem}_hazy.png"
        save_image(pair.hazy, hpath)
        entries.append(Pair(clear_path=_rel(cpath, manifest.parent), hazy_path=_rel(hpath, manifest.parent),
                            beta=pair.beta, airlight=pair.airlight))
    write_manifest(entries, manifest, header=f"greenhaze synth seed={args.seed}")
    print(f"wrote {len(entries)} pairs to {manifest}")
    return EXIT_OK


def _rel(path, base) -> str:
    path, base = Path(path).resolve(), Path(base).resolve()
    try:
        return str(path.relative_to(base))
    except ValueError:
        return str(path)


def _train_config(args) -> TrainConfig:
    try:
        level_resolutions(args.size, args.levels)
        gbt = GbtParams(rounds=args.rounds, eta=args.eta, max_depth=args.max_depth)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    return TrainConfig(
        input_size=args.size, levels=args.levels, pixel_subsample=args.pixel_subsample,
        rft_keep=args.rft_keep, rft_keep_candidates=args.rft_keep_candidates, gbt=gbt, seed=args.seed, val_fraction=args.val_fraction,
        learn_omega=not args.no_omega, ablation=args.ablation, threads=args.threads,
    )


def format_level_table(stats, ablation: bool) -> str:
    """Per-level MSE table, one row per configuration and one column per channel."""
    lines = [f"{'level':>6}  {'features':<15}{'R':>11}{'G':>11}{'B':>11}"]

    def row(res, name, vals):
        return f"{res:>6}  {name:<15}" + "".join(f"{v:>11.6f}" for v in vals)

    for s in stats:
        res = f"{s.resolution}"
        lines.append(f"{res:>6}  {'saab kept':<15}" + "".join(f"{n:>11d}" for n in s.n_selected))
        lines.append(row(res, "train", s.train_mse))
        if ablation:
            lines.append(row(res, "val raw", s.ablation["raw"]))
            lines.append(row(res, "val L1+L2", s.ablation["l1_l2"]))
            lines.append(row(res, "val raw+L1+L2", s.ablation["raw_l1_l2"]))
        else:
            lines.append(row(res, "val", s.val_mse))
    return "\n".join(lines)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    pset = _split_pairs(_load_pairs(args.manifest), args)
    train = pset.subset("train")
    if len(train) < 8:
        raise CliError(f"need at least 8 training pairs, manifest split has {len(train)}", EXIT_INTEGRITY)
    images = []
    for p in train:
        try:
            clear, hazy = p.images()
        except OSError as exc:
            raise CliError(str(exc), EXIT_IO) from exc
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INTEGRITY) from exc
        images.append((hazy, clear))
    t0 = time.perf_counter()
    result = train_pipeline(images, cfg)
    log.info("trained in %.1f s", time.perf_counter() - t0)
    try:
        save_model(result.model, args.model)
    except OSError as exc:
        raise CliError(f"cannot write model {args.model}: {exc}", EXIT_IO) from exc
    print(f"trained on {len(train)} pairs; levels {[s.resolution for s in result.stats]}")
    print(format_level_table(result.stats, args.ablation))
    if args.ablation:
        ok = all(
            a <= r for s in result.stats for a, r in zip(s.ablation["raw_l1_l2"], s.ablation["raw"])
        )
        print(f"raw+L1+L2 <= raw on every level and channel: {'yes' if ok else 'no'}")
    if args.report:
        _write_json(args.report, {
            "n_train": len(train),
            "levels": [
                {"resolution": s.resolution, "train_mse": s.train_mse, "val_mse": s.val_mse,
                 "blend": s.blend, "gate": s.gate, "ablation": s.ablation, "n_selected": s.n_selected}
                for s in result.stats
            ],
        })
    print(f"model written to {args.model}")
    return EXIT_OK


def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def cmd_dehaze(args) -> int:
    model = _load_model(args.model) if args.model else None
    if model is None and not args.dcp_only:
        raise CliError("dehaze needs --model unless --dcp-only is given", EXIT_USAGE)
    single = len(args.images) == 1 and Path(args.output).suffix.lower() == ".png"
    if single:
        targets = [Path(args.output)]
    else:
        out_dir = Path(args.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        targets = [out_dir / f"{Path(p).stem}_dehazed.png" for p in args.images]
        if len(set(targets)) != len(targets):
            raise CliError("input file names collide in the output directory", EXIT_USAGE)
    for src, dst in zip(args.images, targets):
        try:
            img = load_image(src)
        except OSError as exc:
            raise CliError(str(exc), EXIT_IO) from exc
        except ValueError as exc:
            raise CliError(str(exc), EXIT_INTEGRITY) from exc
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        if args.dcp_only:
            params = model.dcp_params if model else DcpParams()
            out = dehaze_dcp(img, params, model.omega_model if model else None)
        else:
            out = infer(img, model)
        save_image(out, dst)
        log.info("%s -> %s", src, dst)
    print(f"wrote {len(targets)} image(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    pairs = _load_pairs(args.manifest)
    if args.split == "all":
        subset = pairs
    else:
        subset = _split_pairs(pairs, args).subset(args.split)
    if not subset:
        raise CliError(f"split {args.split!r} is empty", EXIT_INTEGRITY)
    try:
        report = evaluate(model, subset, args.split, threads=args.threads)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    means = report.means()
    print(f"split {args.split}: {len(subset)} images")
    print(f"{'':>10}{'PSNR':>10}{'SSIM':>10}")
    for name in ("model", "dcp", "hazy"):
        print(f"{name:>10}{means[name + '_psnr']:>10.4f}{means[name + '_ssim']:>10.4f}")
    if args.report:
        _write_json(args.report, report.to_dict())
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = _load_model(args.model)
    rep = report_parameters(model)
    print(f"format version {model.version}; input size {model.input_size}; {len(model.levels)} levels")
    print(f"saab cascade: {rep['saab']} parameters")
    print(f"omega forest: {rep['omega_forest']} parameters")
    for lv in rep["levels"]:
        print(f"level {lv['resolution']}: rft {lv['rft']}, lnt {lv['lnt']}, trees {lv['trees']}, "
              f"blend {lv['blend']}, total {lv['total']}")
    print(f"total: {rep['total']} parameters")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "dehaze": cmd_dehaze, "eval": cmd_eval,
            "inspect": cmd_inspect}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            _apply_config(parser, args.command, read_config(args.config))
            args = parser.parse_args(argv)
        if args.threads < 1:
            raise CliError("--threads must be at least 1", EXIT_USAGE)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except CliError as exc:
        print(f"greenhaze: error: {exc}", file=sys.stderr)
        return exc.code
    except ModelFormatError as exc:
        print(f"greenhaze: error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as exc:
        print(f"greenhaze: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"greenhaze: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
