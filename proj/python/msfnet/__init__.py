# Copyright 2026 The msfnet Authors
# SPDX-License-Identifier: Apache-2.0
"""Python interface to the msfnet multimodal pest detection toolkit."""

import json
import os

from . import _core
from ._core import (ConfigError, DataError, NumericError, ShapeError, degrade, iou,
                    tokenize, upscale, write_toy_assets)

__all__ = [
    "ConfigError", "DataError", "NumericError", "ShapeError", "default_config", "degrade",
    "evaluate", "evaluate_checkpoint", "gradcheck", "iou", "resolved_config", "synth",
    "tokenize", "train", "upscale", "write_toy_assets",
]


def _config_text(config):
    return "" if config is None else json.dumps(config)


def default_config():
    """Run configuration defaults as a dict."""
    return json.loads(_core.default_config_json())


def resolved_config(config=None):
    """Config with the bridge preset, SPP kernels and anchors filled in."""
    return json.loads(_core.resolved_config_json(_config_text(config)))


def evaluate(images, num_class, conf_thresh=0.5):
    """images: iterable of (detections, truths).

    detections are (class_id, confidence, x1, y1, x2, y2) tuples and truths
    are (class_id, x1, y1, x2, y2) tuples.
    """
    return json.loads(_core.evaluate_json([(list(d), list(t)) for d, t in images],
                                          num_class, conf_thresh))


def synth(backgrounds, targets, out, per_image=2, count=10, seed=0, scale_jitter=False):
    return json.loads(_core.synth_json(os.fspath(backgrounds), os.fspath(targets),
                                       os.fspath(out), per_image, count, seed, scale_jitter))


def train(manifest, out=None, config=None, split="train"):
    """Trains from a manifest; returns final_step and the (L_PTI, L_B, L_O) trace."""
    return json.loads(_core.train_json(os.fspath(manifest), "" if out is None else os.fspath(out),
                                       _config_text(config), split))


def evaluate_checkpoint(checkpoint, manifest, split="test"):
    return json.loads(_core.evaluate_checkpoint_json(os.fspath(checkpoint), os.fspath(manifest),
                                                     split))


def gradcheck(config=None, coords=4, corrupt=""):
    return json.loads(_core.gradcheck_json(_config_text(config), coords, corrupt))
