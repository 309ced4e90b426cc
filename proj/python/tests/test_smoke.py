# Copyright 2026 The msfnet Authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the msfnet Python module."""

import numpy as np
import pytest

import msfnet


def test_tokenize_matches_options():
    tokens = msfnet.tokenize("Brown Planthopper, brown wings.")
    assert len(tokens) == 4
    assert tokens[0] == tokens[2]
    assert all(0 <= t < 4096 for t in tokens)
    assert len(msfnet.tokenize("a b c d e", sent_maxlen=3)) == 3
    with pytest.raises(msfnet.DataError):
        msfnet.tokenize("  ,, ")


def test_upscale_and_degrade():
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(3, 8, 6))
    near = msfnet.upscale(image, 2, "nearest")
    assert near.shape == (3, 16, 12)
    assert np.array_equal(near[:, ::2, ::2], image)
    assert np.allclose(msfnet.degrade(near, 2), image)
    assert msfnet.upscale(image, 4).shape == (3, 32, 24)
    with pytest.raises(msfnet.ShapeError):
        msfnet.upscale(image, 3)


def test_iou_and_evaluate():
    assert msfnet.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    truths = [(0, 0, 0, 10, 10), (1, 20, 20, 30, 30)]
    perfect = [(c, 0.9, x1, y1, x2, y2) for c, x1, y1, x2, y2 in truths]
    report = msfnet.evaluate([(perfect, truths)], num_class=2)
    assert report["mAP"] == 1.0
    assert report["mAP50"] == 1.0
    empty = msfnet.evaluate([([], truths)], num_class=2)
    assert empty["mAP50"] == 0.0
    with pytest.raises(msfnet.DataError):
        msfnet.evaluate([([], [])], num_class=2)


def test_config_defaults():
    cfg = msfnet.default_config()
    assert cfg["learning_rate"] == 5e-5
    assert cfg["conf_thresh"] == 0.5
    assert cfg["nms_thresh"] == 0.4
    resolved = msfnet.resolved_config({"num_class": 3})
    assert resolved["bridge"] is not None
    with pytest.raises(msfnet.ConfigError):
        msfnet.resolved_config({"no_such_key": 1})


def test_synth_train_evaluate(tmp_path):
    msfnet.write_toy_assets(str(tmp_path / "assets"), 3, 3, 2, 48, 1)
    made = msfnet.synth(tmp_path / "assets" / "backgrounds", tmp_path / "assets" / "targets",
                        tmp_path / "data", per_image=2, count=2, seed=5)
    assert made["images"] == 2 and made["boxes"] == 4
    manifest = tmp_path / "data" / "manifest.jsonl"
    ckpt = tmp_path / "model.ckpt"
    run = msfnet.train(manifest, ckpt, {"max_steps": 2, "batch_size": 2}, split="all")
    assert run["final_step"] == 2
    assert len(run["trace"]) == 2
    report = msfnet.evaluate_checkpoint(ckpt, manifest, split="all")
    assert report["images"] == 2
    again = msfnet.evaluate_checkpoint(ckpt, manifest, split="all")
    assert again == report


def test_gradcheck_report():
    report = msfnet.gradcheck(coords=1)
    assert report["passed"] is True
    names = {c["name"] for c in report["components"]}
    assert {"matmul", "conv2d", "model.end_to_end"} <= names
