# Copyright 2026 The msfnet Authors
# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the msfnet command-line tool."""

import csv
import io
import json
import os
import subprocess
import sys

import pytest

CLI = os.environ.get("MSFNET_CLI", "msfnet")


def run(*args, check_code=None):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check_code is not None:
        assert proc.returncode == check_code, proc.stderr
    return proc


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "data"
    proc = run("synth", "--toy-assets", root / "assets", "--toy-classes", 3,
               "--per-image", 2, "--count", 10, "--seed", 1, "--out", out, check_code=0)
    report = json.loads(proc.stdout)
    assert report["images"] == 10
    return root, out / "manifest.jsonl"


def test_no_subcommand_is_usage_error():
    assert run().returncode == 1
    assert run("frobnicate").returncode == 1
    assert run("train").returncode == 1


def test_help_succeeds():
    proc = run("--help", check_code=0)
    assert "synth" in proc.stdout


def test_synth_outputs(dataset):
    root, manifest = dataset
    rows = [json.loads(line) for line in manifest.read_text().splitlines()]
    assert len(rows) == 10
    assert list(rows[0]) == ["image", "annotations", "text", "width", "height"]
    ann = (manifest.parent / rows[0]["annotations"]).read_text().splitlines()
    assert len(ann) == 2
    for line in ann:
        cls, x1, y1, x2, y2 = map(int, line.split())
        assert 0 <= cls < 3 and x1 < x2 and y1 < y2


def test_synth_is_deterministic(dataset, tmp_path):
    root, manifest = dataset
    run("synth", "--backgrounds", root / "assets" / "backgrounds", "--targets",
        root / "assets" / "targets", "--per-image", 2, "--count", 10, "--seed", 1,
        "--out", tmp_path, check_code=0)
    for name in sorted(p.name for p in manifest.parent.iterdir()):
        assert (tmp_path / name).read_bytes() == (manifest.parent / name).read_bytes(), name


def test_synth_missing_inputs_is_data_error(tmp_path):
    assert run("synth", "--backgrounds", tmp_path / "none", "--targets", tmp_path / "none",
               "--count", 1, "--out", tmp_path / "o").returncode == 2


def test_split_train_eval_inspect(dataset, tmp_path):
    root, manifest = dataset
    tagged = tmp_path / "tagged.jsonl"
    report = json.loads(run("split", "--manifest", manifest, "--out", tagged, "--seed", 4,
                            check_code=0).stdout)
    assert [report["train"], report["val"], report["test"]] == [8, 1, 1]

    ckpt = tmp_path / "model.ckpt"
    proc = run("train", "--manifest", tagged, "--out", ckpt, "--max-steps", 3,
               "--batch_size", 2, "--trace-csv", tmp_path / "trace.csv", check_code=0)
    train = json.loads(proc.stdout)
    assert train["final_step"] == 3
    assert len(train["trace"]) == 3
    assert ckpt.read_bytes()[:8] == b"MSFNETCK"
    rows = list(csv.reader(io.StringIO((tmp_path / "trace.csv").read_text())))
    assert len(rows) == 4

    first = run("eval", "--checkpoint", ckpt, "--manifest", tagged, check_code=0).stdout
    second = run("eval", "--checkpoint", ckpt, "--manifest", tagged, check_code=0).stdout
    assert first == second
    ev = json.loads(first)
    for key in ("mAP", "mAP50", "mAP75", "precision", "recall"):
        assert key in ev
    table = run("eval", "--checkpoint", ckpt, "--manifest", tagged, "--csv", check_code=0)
    assert len(table.stdout.strip().splitlines()) == 2

    dets = tmp_path / "dets"
    run("eval", "--checkpoint", ckpt, "--manifest", tagged, "--split", "all",
        "--detections", dets, "--conf_thresh", "0.0001", check_code=0)
    files = sorted(dets.iterdir())
    assert len(files) == 10
    for line in files[0].read_text().splitlines():
        fields = line.split()
        assert len(fields) == 6
        assert all(len(f.split(".")[1]) == 6 for f in fields[1:])

    info = json.loads(run("inspect", "--checkpoint", ckpt, check_code=0).stdout)
    assert info["meta"]["step"] == 3
    assert info["parameters"] > 0
    stats = json.loads(run("inspect", "--manifest", tagged, check_code=0).stdout)
    assert stats["samples"] == 10


def test_config_file_and_overrides(dataset, tmp_path):
    root, manifest = dataset
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_steps": 1, "batch_size": 1, "text_enabled": False}))
    out = json.loads(run("train", "--manifest", manifest, "--config", cfg, "--out",
                         tmp_path / "a.ckpt", "--max_steps", 2, check_code=0).stdout)
    assert out["final_step"] == 2
    assert out["text_tokens"] == 0
    assert run("train", "--manifest", manifest, "--config", cfg, "--out",
               tmp_path / "b.ckpt", "--no_such_key", 3).returncode == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--manifest", manifest, "--config", bad, "--out",
               tmp_path / "c.ckpt").returncode == 2


def test_data_errors_exit_2(dataset, tmp_path):
    root, manifest = dataset
    assert run("train", "--manifest", tmp_path / "missing.jsonl", "--out",
               tmp_path / "x.ckpt").returncode == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"garbage")
    assert run("eval", "--checkpoint", junk, "--manifest", manifest).returncode == 2
    assert run("inspect", "--checkpoint", junk).returncode == 2


def test_gradcheck_exit_codes():
    ok = run("gradcheck", "--coords", 1, check_code=0)
    assert json.loads(ok.stdout)["passed"] is True
    broken = run("gradcheck", "--coords", 1, "--corrupt", "fusion.attention")
    assert broken.returncode == 3
    report = json.loads(broken.stdout)
    failed = [c["name"] for c in report["components"] if not c["passed"]]
    assert failed == ["fusion.attention"]


def test_sr_nearest_and_external(dataset, tmp_path):
    root, manifest = dataset
    image = manifest.parent / "acie_000000.png"
    run("sr", "--input", image, "--out", tmp_path / "near", "--factor", 4, "--method",
        "nearest", check_code=0)
    assert (tmp_path / "near" / "acie_000000.png").exists()
    hook = tmp_path / "hook.py"
    hook.write_text(
        "import sys\nfrom PIL import Image\n"
        "src, dst, f = sys.argv[1], sys.argv[2], int(sys.argv[3])\n"
        "im = Image.open(src)\n"
        "im.resize((im.width * f, im.height * f), Image.NEAREST).save(dst)\n")
    run("sr", "--input", image, "--out", tmp_path / "ext", "--method", "external",
        "--factor", 4, "--sr-command", f"{sys.executable} {hook}", check_code=0)
    from PIL import Image
    ext = Image.open(tmp_path / "ext" / "acie_000000.png").convert("RGB")
    near = Image.open(tmp_path / "near" / "acie_000000.png").convert("RGB")
    assert ext.size == near.size
    assert ext.tobytes() == near.tobytes()
    assert run("sr", "--input", image, "--out", tmp_path / "bad", "--factor", 3).returncode != 0
    assert run("sr", "--input", image, "--out", tmp_path / "fail", "--method", "external",
               "--sr-command", "false").returncode == 2
