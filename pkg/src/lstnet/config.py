"""Flat dotted-key run configuration shared by every command-line action.

Precedence, lowest first: built-in defaults, ``--preset``, ``--config`` file,
``--set key=value`` overrides, then the dedicated flags (``--seed``,
``--max-steps``, ``--out``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

from .augment import AugmentConfig
from .evaluation import ClassifierHyper
from .networks import BuildConfig
from .objective import ObjectiveWeights
from .trainer import TrainConfig

# key -> (default, type); ``None`` defaults are optional values of that type
SCHEMA: dict[str, tuple[Any, type]] = {
    "seed": (0, int),
    "out": ("runs/latest", str),
    "data.source": ("mnist-usps", str),
    "data.mnist_dir": (None, str),
    "data.usps_train": (None, str),
    "data.usps_test": (None, str),
    "data.strict": (True, bool),
    "data.limit": (None, int),
    "data.toy_n": (512, int),
    "data.toy_test_n": (256, int),
    "build.arch": ("standard", str),
    "build.slash_order": ("12", str),
    "build.leaky_slope": (0.2, float),
    "build.bn_epsilon": (1e-5, float),
    "build.bn_momentum": (0.9, float),
    "build.dtype": ("float32", str),
    "train.lr": (1e-4, float),
    "train.beta1": (0.8, float),
    "train.beta2": (0.999, float),
    "train.epsilon": (1e-8, float),
    "train.batch_size": (64, int),
    "train.max_steps": (20000, int),
    "train.log_interval": (10, int),
    "train.checkpoint_interval": (0, int),
    "train.augment": (True, bool),
    "train.nonsaturating": (True, bool),
    "weights.w1": (20.0, float),
    "weights.w2": (20.0, float),
    "weights.wl": (30.0, float),
    "weights.w3": (100.0, float),
    "weights.w4": (100.0, float),
    "weights.w5": (100.0, float),
    "weights.w6": (100.0, float),
    "augment.max_rotation_deg": (10.0, float),
    "augment.scale_min": (0.9, float),
    "augment.scale_max": (1.1, float),
    "augment.max_shift_px": (2, int),
    "augment.fill": (-1.0, float),
    "classifier.lr": (1e-3, float),
    "classifier.batch_size": (64, int),
    "classifier.max_epochs": (20, int),
    "classifier.max_steps": (None, int),
    "classifier.patience": (2, int),
    "classifier.time_budget": (None, float),
    "eval.limit": (None, int),
    "eval.batch_size": (128, int),
}

PRESETS: dict[str, dict[str, Any]] = {
    # desk-scale synthetic run: a few minutes on a laptop CPU
    "toy": {
        "data.source": "toy",
        "build.arch": "toy",
        "train.lr": 1e-3,
        "train.batch_size": 32,
        "train.max_steps": 500,
        "train.log_interval": 10,
        "train.augment": False,
        "weights.wl": 300.0,
        "classifier.max_epochs": 10,
        "out": "runs/toy",
    },
    "mnist-usps": {
        "data.source": "mnist-usps",
        "build.arch": "standard",
        "out": "runs/mnist-usps",
    },
}


class ConfigError(ValueError):
    pass


def valid_keys() -> list[str]:
    return sorted(SCHEMA)


def _coerce(key: str, value: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}; valid keys are: {', '.join(valid_keys())}")
    default, kind = SCHEMA[key]
    if value is None:
        return None
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    if kind is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind in (int, float) and isinstance(value, str):
        try:
            value = kind(value)
        except ValueError:
            raise ConfigError(f"{key} expects {kind.__name__}, got {value!r}") from None
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{key} expects {kind.__name__}, got {value!r}")
    return value


def flatten(d: dict, prefix: str = "") -> dict:
    """Accept nested JSON objects as an alternative spelling of dotted keys."""
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve(preset: Optional[str] = None, config_file=None, overrides: Optional[dict] = None) -> dict:
    cfg = {k: v for k, (v, _) in SCHEMA.items()}
    layers = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layers.append(PRESETS[preset])
    if config_file is not None:
        try:
            layers.append(flatten(json.loads(Path(config_file).read_text())))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_file}: not valid JSON ({exc})") from None
    layers.append(overrides or {})
    for layer in layers:
        for k, v in layer.items():
            cfg[k] = _coerce(k, v)
    if cfg["data.source"] not in ("toy", "mnist-usps"):
        raise ConfigError(f"data.source must be 'toy' or 'mnist-usps', got {cfg['data.source']!r}")
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        **_section(cfg, "train"),
        seed=cfg["seed"],
        weights=ObjectiveWeights(**_section(cfg, "weights")),
        augmentation=AugmentConfig(**_section(cfg, "augment")),
    )


def build_config(cfg: dict, shapes: dict) -> BuildConfig:
    return BuildConfig(domain_shapes=shapes, seed=cfg["seed"], **_section(cfg, "build"))


def classifier_hyper(cfg: dict) -> ClassifierHyper:
    return ClassifierHyper(**_section(cfg, "classifier"), seed=cfg["seed"])


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
