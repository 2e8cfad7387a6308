"""Flat dotted-key configuration: file parsing, CLI overrides, model building.

Config files are line-oriented ``key = value`` text with ``#`` comments.
Values parse as JSON fragments (numbers, booleans, lists, strings), which
covers per-layer mask lists. ``--set key=value`` flags override file values;
last flag wins. Unknown keys are errors.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "task.vocab": 8,
    "task.u_min": 2,
    "task.u_max": 6,
    "task.frames_min": 3,
    "task.frames_max": 5,
    "task.feature_dim": 8,
    "task.noise": 0.05,
    "encoder.layers": 2,
    "encoder.dim": 32,
    "encoder.heads": 4,
    "encoder.ff_dim": 64,
    "encoder.conv_kernel": 7,
    "encoder.subsample": 4,
    "encoder.mask.left": None,
    "encoder.mask.right": None,
    "predictor.layers": 1,
    "predictor.dim": 32,
    "predictor.heads": 2,
    "predictor.ff_dim": 64,
    "predictor.memory": 16,
    "jointer.dim": 32,
    "jointer.normalize": False,
    "jointer.divisor_includes_start": True,
    "train.batch": 8,
    "train.steps": 600,
    "train.warmup": 300,
    "train.init_lr": 1e-7,
    "train.peak_lr": 5e-4,
    "train.floor_lr": 1e-5,
    "train.decay": 0.98,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.eval_interval": 50,
    "train.eval_size": 32,
    "train.max_symbols_per_frame": 5,
}

# the paper-scale settings, recorded for reference; never the test default
PAPER_SCALE = {
    "encoder.layers": 12, "encoder.dim": 256, "encoder.heads": 4,
    "encoder.ff_dim": 2048, "encoder.mask.left": 40, "encoder.mask.right": 40,
    "jointer.dim": 768, "train.warmup": 15000, "train.peak_lr": 5e-4,
}


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("none", "null"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare string


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config_file(path: str, base: dict | None = None) -> dict:
    cfg = base if base is not None else default_config()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in cfg:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = _parse_value(value)
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(value)
    return cfg


def build_model(cfg: dict):
    from .encoder import EncoderConfig
    from .jointer import JointConfig
    from .model import TransducerModel
    from .predictor import PredictorConfig

    enc = EncoderConfig(
        layers=cfg["encoder.layers"], dim=cfg["encoder.dim"],
        heads=cfg["encoder.heads"], ff_dim=cfg["encoder.ff_dim"],
        conv_kernel=cfg["encoder.conv_kernel"], subsample=cfg["encoder.subsample"],
        feature_dim=cfg["task.feature_dim"],
        mask_left=cfg["encoder.mask.left"], mask_right=cfg["encoder.mask.right"])
    pre = PredictorConfig(
        layers=cfg["predictor.layers"], dim=cfg["predictor.dim"],
        heads=cfg["predictor.heads"], ff_dim=cfg["predictor.ff_dim"],
        memory=cfg["predictor.memory"], vocab_size=cfg["task.vocab"])
    joint = JointConfig(
        joint_dim=cfg["jointer.dim"], vocab_size=cfg["task.vocab"],
        normalize=bool(cfg["jointer.normalize"]),
        divisor_includes_start=bool(cfg["jointer.divisor_includes_start"]))
    return TransducerModel(enc, pre, joint, seed=cfg["seed"])


def build_task(cfg: dict):
    from .harness import ToyTask
    return ToyTask(vocab=cfg["task.vocab"],
                   u_min=cfg["task.u_min"], u_max=cfg["task.u_max"],
                   frames_min=cfg["task.frames_min"], frames_max=cfg["task.frames_max"],
                   feature_dim=cfg["task.feature_dim"], noise=cfg["task.noise"],
                   seed=cfg["seed"])


def build_train_config(cfg: dict):
    from .harness import TrainConfig
    return TrainConfig(batch=cfg["train.batch"], steps=cfg["train.steps"],
                       warmup=cfg["train.warmup"], init_lr=cfg["train.init_lr"],
                       peak_lr=cfg["train.peak_lr"], floor_lr=cfg["train.floor_lr"],
                       decay=cfg["train.decay"], beta1=cfg["train.beta1"],
                       beta2=cfg["train.beta2"], eps=cfg["train.eps"],
                       eval_interval=cfg["train.eval_interval"],
                       eval_size=cfg["train.eval_size"],
                       normalize=bool(cfg["jointer.normalize"]),
                       seed=cfg["seed"])
