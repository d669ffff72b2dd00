import json

import numpy as np
import pytest

from greenhaze.cli import main, read_config
from greenhaze.dcp import dehaze_dcp
from greenhaze.imaging import load_image, save_image, to_bytes
from greenhaze.modelio import load_model

TRAIN_FLAGS = ["--size", "32", "--levels", "2", "--rounds", "5", "--max-depth", "3", "--rft-keep", "6"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--seed", "3", "synth", "--procedural", "12", "--size", "32", "--output", str(root)]) == 0
    model = root / "model.gusl"
    assert main(["--seed", "3", "train", "--manifest", str(root / "manifest.tsv"), "--model", str(model),
                 *TRAIN_FLAGS]) == 0
    return root


def test_synth_counts_and_determinism(workdir, tmp_path, capsys):
    lines = [l for l in (workdir / "manifest.tsv").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 12
    other = tmp_path / "again"
    assert main(["--seed", "3", "synth", "--procedural", "12", "--size", "32", "--output", str(other)]) == 0
    assert (other / "manifest.tsv").read_bytes() == (workdir / "manifest.tsv").read_bytes()
    assert "wrote 12 pairs" in capsys.readouterr().out


def test_synth_from_directory(tmp_path, rng, capsys):
    src = tmp_path / "in"
    src.mkdir()
    for i in range(10):
        save_image(rng.random((16, 16, 3)), src / f"{i}.png")
    assert main(["synth", "--input", str(src), "--output", str(tmp_path / "out")]) == 0
    assert "wrote 10 pairs" in capsys.readouterr().out


def test_synth_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["synth", "--input", str(tmp_path / "empty"), "--output", str(tmp_path / "o")])
    assert code != 0
    assert "no images found" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["train", "--manifest", "x"]) == 1
    assert main(["--help"]) == 0


def test_missing_manifest_is_io_error(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "nope.tsv"), "--model", str(tmp_path / "m")]) == 2


def test_train_is_deterministic(workdir, tmp_path):
    again = tmp_path / "again.gusl"
    assert main(["--seed", "3", "train", "--manifest", str(workdir / "manifest.tsv"), "--model", str(again),
                 *TRAIN_FLAGS]) == 0
    assert again.read_bytes() == (workdir / "model.gusl").read_bytes()


def test_train_levels(workdir):
    model = load_model(workdir / "model.gusl")
    assert [lv.resolution for lv in model.levels] == [8, 16]


def test_train_table_and_report(workdir, tmp_path, capsys):
    report = tmp_path / "train.json"
    assert main(["--seed", "3", "train", "--manifest", str(workdir / "manifest.tsv"), "--model",
                 str(tmp_path / "m.gusl"), "--ablation", "--report", str(report), *TRAIN_FLAGS]) == 0
    out = capsys.readouterr().out
    assert "val raw+L1+L2" in out and "raw+L1+L2 <= raw on every level and channel" in out
    assert len(json.loads(report.read_text())["levels"]) == 2


def test_dehaze_single_and_batch(workdir, tmp_path):
    hazy = sorted((workdir / "hazy").glob("*.png"))[:3]
    out = tmp_path / "one.png"
    assert main(["dehaze", str(hazy[0]), "--model", str(workdir / "model.gusl"), "--output", str(out)]) == 0
    assert load_image(out).shape == load_image(hazy[0]).shape
    assert main(["dehaze", *map(str, hazy), "--model", str(workdir / "model.gusl"), "--output", str(tmp_path / "a")]) == 0
    assert main(["dehaze", *map(str, hazy[::-1]), "--model", str(workdir / "model.gusl"), "--output", str(tmp_path / "b")]) == 0
    for h in hazy:
        name = f"{h.stem}_dehazed.png"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dehaze_dcp_only_matches_direct_call(workdir, tmp_path):
    src = sorted((workdir / "hazy").glob("*.png"))[0]
    out = tmp_path / "dcp.png"
    assert main(["dehaze", str(src), "--dcp-only", "--output", str(out)]) == 0
    assert np.array_equal(to_bytes(load_image(out)), to_bytes(dehaze_dcp(load_image(src))))


def test_dehaze_needs_model(tmp_path, rng):
    save_image(rng.random((8, 8, 3)), tmp_path / "x.png")
    assert main(["dehaze", str(tmp_path / "x.png"), "--output", str(tmp_path / "y.png")]) == 1
    assert main(["dehaze", str(tmp_path / "x.png"), "--model", str(tmp_path / "none"), "--output",
                 str(tmp_path / "y.png")]) == 2


def test_eval_report_matches_print(workdir, tmp_path, capsys):
    report = tmp_path / "r.json"
    args = ["--seed", "3", "eval", "--model", str(workdir / "model.gusl"), "--manifest",
            str(workdir / "manifest.tsv"), "--report", str(report)]
    assert main(args) == 0
    printed = capsys.readouterr().out
    data = json.loads(report.read_text())
    assert data["n_images"] == 2
    assert f"{data['mean']['model_psnr']:.4f}" in printed
    first = report.read_bytes()
    assert main(args) == 0
    assert report.read_bytes() == first


def test_eval_identity_manifest(workdir, tmp_path, capsys):
    clears = sorted((workdir / "clear").glob("*.png"))[:2]
    manifest = tmp_path / "ident.tsv"
    manifest.write_text("".join(f"{c}\t{c}\n" for c in clears))
    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(workdir / "model.gusl"), "--manifest", str(manifest), "--split", "all",
                 "--report", str(report)]) == 0
    assert json.loads(report.read_text())["mean"]["hazy_psnr"] == 99.0


def test_inspect(workdir, capsys):
    assert main(["inspect", "--model", str(workdir / "model.gusl")]) == 0
    out = capsys.readouterr().out
    assert "format version 1" in out
    level_totals = [int(l.rsplit(" ", 1)[1]) for l in out.splitlines() if l.startswith("level ")]
    assert all(t > 0 for t in level_totals)
    saab = int(out.split("saab cascade: ")[1].split()[0])
    omega = int(out.split("omega forest: ")[1].split()[0])
    total = int(out.split("total: ")[1].split()[0])
    assert total == saab + omega + sum(level_totals)


def test_corrupt_model_exit_3(workdir, tmp_path):
    data = bytearray((workdir / "model.gusl").read_bytes())
    data[len(data) // 2] ^= 0x20
    bad = tmp_path / "bad.gusl"
    bad.write_bytes(bytes(data))
    assert main(["inspect", "--model", str(bad)]) == 3
    assert main(["eval", "--model", str(bad), "--manifest", str(workdir / "manifest.tsv")]) == 3


def test_config_precedence(workdir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# shared\nsize=32\nlevels = 2\nrounds=5\nmax-depth=3\nrft_keep=6\nsplit=all\n")
    a = tmp_path / "a.gusl"
    assert main(["--seed", "3", "--config", str(cfg), "train", "--manifest", str(workdir / "manifest.tsv"),
                 "--model", str(a)]) == 0
    assert a.read_bytes() == (workdir / "model.gusl").read_bytes()
    b = tmp_path / "b.gusl"
    assert main(["--seed", "3", "--config", str(cfg), "train", "--manifest", str(workdir / "manifest.tsv"),
                 "--model", str(b), "--rounds", "2"]) == 0
    assert len(load_model(b).levels[0].regressor_raw[0].trees) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    assert main(["--config", str(bad), "inspect", "--model", "x"]) == 1
    bad.write_text("no equals sign\n")
    assert main(["--config", str(bad), "inspect", "--model", "x"]) == 1
    assert main(["--config", str(tmp_path / "missing.cfg"), "inspect", "--model", "x"]) == 2


def test_read_config_normalises_keys(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("--max-depth = 4\nrft_keep=3\n")
    assert read_config(cfg) == {"max_depth": "4", "rft_keep": "3"}
