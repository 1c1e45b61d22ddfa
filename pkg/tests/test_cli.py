import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import TINY
from oracles import scene
from pdan.arch import build_network
from pdan.checkpoint import save_checkpoint
from pdan.cli import main
from pdan.dataset import read_png, write_png
from pdan.imaging import quantize


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_inspect_default_joint(capsys):
    code, out, _ = run(capsys, "inspect", "--scale", "4", "--attention", "joint")
    assert code == 0
    assert "params: 1587K (1586883), flops: ~32.25 G" in out
    assert "parameter counts agree" in out


@pytest.mark.parametrize("argv,needle", [
    (["--scale", "2"], "params: 1439K"),
    (["--scale", "3", "--hr-size", "510"], "params: 1624K"),
    (["--attention", "none"], "params: 1471K (1470723), flops: ~31.78 G"),
])
def test_inspect_variants(capsys, argv, needle):
    code, out, _ = run(capsys, "inspect", *argv)
    assert code == 0 and needle in out


def test_inspect_csv(capsys):
    code, out, _ = run(capsys, "inspect", "--blocks", "1", "--format", "csv")
    assert code == 0
    rows = list(csv.reader(out.splitlines()[:-2]))
    assert rows[0] == ["node", "params_w", "params_b", "macs", "resolution"]
    assert rows[1][:3] == ["head", "1728", "64"]


def test_usage_and_config_errors(capsys, tmp_path):
    assert run(capsys, "inspect", "--bogus")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
    code, _, err = run(capsys, "inspect", "--set", "model.depth=3")
    assert code == 2 and "model.depth" in err
    ini = tmp_path / "c.ini"
    ini.write_text("[growth]\ng = 15\n")
    code, _, err = run(capsys, "inspect", "--config", ini)
    assert code == 2 and "layer 2" in err
    assert run(capsys, "inspect", "--scale", "3", "--hr-size", "512")[0] == 2


def test_config_file_and_overrides(capsys, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nnum_blocks = 1\ntrunk_channels = 8\nreduction = 4\n"
                   "[growth]\nc0 = 4\ng0 = 8\ng = 4\n")
    code, out, _ = run(capsys, "inspect", "--config", ini, "--set", "model.scale=2")
    assert code == 0 and "(9235)" in out


@pytest.fixture
def tiny_ckpt(tmp_path):
    path = tmp_path / "tiny.pdan"
    save_checkpoint(build_network(TINY, seed=1), path)
    return path


def test_sr_output_shape_and_determinism(capsys, tmp_path, tiny_ckpt):
    src = tmp_path / "in.png"
    write_png(src, scene(10, 13))
    for out_dir in ("o1", "o2"):
        assert run(capsys, "sr", "--checkpoint", tiny_ckpt, "--output", tmp_path / out_dir, src)[0] == 0
    a, b = tmp_path / "o1" / "in_x2.png", tmp_path / "o2" / "in_x2.png"
    assert read_png(a).shape == (3, 20, 26)
    assert a.read_bytes() == b.read_bytes()
    assert run(capsys, "sr", "--checkpoint", tiny_ckpt, "--scale", "4",
               "--output", tmp_path / "o3", src)[0] == 2


def test_sr_zero_weights_black(capsys, tmp_path):
    m = build_network(TINY)
    for t in m.params.values():
        t.data[...] = 0
    save_checkpoint(m, tmp_path / "zero.pdan")
    src = tmp_path / "in.png"
    write_png(src, scene(6, 6))
    assert run(capsys, "sr", "--checkpoint", tmp_path / "zero.pdan", "--output", tmp_path, src)[0] == 0
    assert np.all(read_png(tmp_path / "in_x2.png") == 0)


def test_sr_corrupt_checkpoint(capsys, tmp_path, tiny_ckpt):
    raw = bytearray(tiny_ckpt.read_bytes())
    raw[100] ^= 1
    tiny_ckpt.write_bytes(bytes(raw))
    src = tmp_path / "in.png"
    write_png(src, scene(6, 6))
    code, _, err = run(capsys, "sr", "--checkpoint", tiny_ckpt, "--output", tmp_path, src)
    assert code == 2 and "checksum" in err


def test_degrade_outputs(capsys, tmp_path):
    src = tmp_path / "hr.png"
    write_png(src, scene(48, 36))
    assert run(capsys, "degrade", "--scale", "4", "--output", tmp_path / "lr.png", src)[0] == 0
    assert read_png(tmp_path / "lr.png").shape == (3, 12, 9)
    code, _, err = run(capsys, "degrade", "--kind", "dn", "--scale", "2", "--seed", "1",
                       "--output", tmp_path / "dn", src)
    assert code == 0 and "x3" in err
    assert read_png(tmp_path / "dn" / "hr.png").shape == (3, 24, 18)
    run(capsys, "degrade", "--kind", "dn", "--scale", "2", "--seed", "1", "--output",
        tmp_path / "dn2", src)
    assert (tmp_path / "dn" / "hr.png").read_bytes() == (tmp_path / "dn2" / "hr.png").read_bytes()
    assert run(capsys, "degrade", "--output", tmp_path / "x.png", src, src)[0] == 2


def test_eval_modes(capsys, tmp_path, tiny_ckpt):
    bench = tmp_path / "bench"
    bench.mkdir()
    for k in range(2):
        write_png(bench / f"b{k}.png", quantize(scene(32, 30, k)))
    out_csv = tmp_path / "m.csv"
    code, out, _ = run(capsys, "eval", "--mode", "bicubic", "--scale", "2", "--benchmark", bench,
                       "--csv", out_csv)
    assert code == 0 and "over 2 images" in out
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["image"] for r in rows] == ["b0", "b1", "mean"]
    mean = (float(rows[0]["psnr_db"]) + float(rows[1]["psnr_db"])) / 2
    assert float(rows[2]["psnr_db"]) == pytest.approx(mean, abs=2e-6)

    code, _, _ = run(capsys, "eval", "--mode", "oracle", "--scale", "2", "--benchmark", bench,
                     "--csv", out_csv)
    assert code == 0
    assert open(out_csv).read().splitlines()[-1] == "mean,100.000000,1.000000"

    assert run(capsys, "eval", "--checkpoint", tiny_ckpt, "--benchmark", bench,
               "--csv", out_csv)[0] == 0
    assert run(capsys, "eval", "--mode", "bicubic", "--benchmark", bench)[0] == 2
    assert run(capsys, "eval", "--benchmark", bench)[0] == 2


def test_train_command(capsys, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    write_png(data / "a.png", scene(24, 24))
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\nscale = 2\nnum_blocks = 1\ntrunk_channels = 8\nreduction = 4\n"
                   "[growth]\nc0 = 4\ng0 = 8\ng = 4\n"
                   "[train]\nbatch_size = 2\npatch_size = 6\nsteps_per_epoch = 3\nepochs = 2\n")
    run_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train", "--config", ini, "--data", data, "--run-dir", run_dir)
    assert code == 0 and "trained to step 6" in out
    assert (run_dir / "config.ini").read_text() == ini.read_text()
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["model"]["trunk_channels"] == 8 and resolved["train"]["batch_size"] == 2
    assert len((run_dir / "train_log.csv").read_text().splitlines()) == 7
    assert run(capsys, "sr", "--checkpoint", run_dir / "checkpoint.pdan", "--output",
               tmp_path / "sr", data / "a.png")[0] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pdan", "inspect", "--blocks", "1",
                           "--scale", "2"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and "params:" in proc.stdout
