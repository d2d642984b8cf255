"""Experiment configuration: one JSON file, validated key by key.

A config has a handful of top-level keys plus sections (data,
schedule, encoder, denoiser, trainer, channel, sweep).  Unknown keys
fail fast and name the offender, so typos cannot silently fall back
to defaults.  Named presets provide the full-scale training recipes
and a fast synthetic smoke setup; explicit keys override preset
values, and CLI ``--set section.key=value`` overrides both.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

DEFAULT_CONFIG = {
    "pipeline": "cdiff",
    "out_dir": "runs/out",
    "data": {
        "dataset": "synthetic",
        "root": None,
        "train_samples": 2000,
        "eval_samples": 64,
    },
    "schedule": {
        "T": 200,
        "beta_start": 1e-4,
        "beta_end": 0.0095,
        "w_schedule": "linear",
    },
    "encoder": {
        "arch": "auto",          # auto | mnist | cifar10
        "conv_channels": None,   # explicit override of the arch preset
        "conv_strides": None,
        "batch_norm": None,
    },
    "denoiser": {
        "base_dim": 32,
        "dim_mults": [1, 2, 4],
        "time_dim": None,
        "use_attention": False,
    },
    "trainer": {
        "regime": "fixed",
        "cbr": 0.3,
        "cbr_list": [0.2, 0.25, 0.3, 0.35, 0.4, 0.45],
        "epochs": 10,
        "batch_size": 32,
        "lr": 1e-3,
        "train_snr_db": [-10.0, 10.0],
        "ema_decay": 0.995,
        "seed": 0,
    },
    "channel": {
        "power": 1.0,
        "noise_mode": "forward",
    },
    "sweep": {
        "snr_db": [-10.0, 0.0, 10.0, 20.0, 30.0],
        "cbr": None,             # None: the trained bandwidth(s)
        "interference": None,    # list of two-user coefficient pairs
        "seeds": [0],
        "samples": 64,
        "workers": 1,            # parallel cell evaluation (fork pool)
    },
}

# Full-scale recipes plus the fast synthetic smoke setup.  Desk-scale
# runs should start from "smoke"; the dataset presets record the
# intended full training shapes.
PRESETS = {
    "smoke": {
        "data": {"dataset": "synthetic", "train_samples": 2000,
                 "eval_samples": 24},
        # beta_end chosen so the conditioning ramp reaches exactly 1 at
        # t=T: the sampling-time N(0, I) start then matches the forward
        # marginal given the condition.
        "schedule": {"T": 50, "beta_end": 0.05},
        "denoiser": {"base_dim": 16, "dim_mults": [1, 2]},
        # ema_decay 0.9: at smoke step counts the default 0.995 shadow
        # still remembers ~30% of the random init.
        "trainer": {"epochs": 2, "batch_size": 32, "ema_decay": 0.9},
        "sweep": {"samples": 24},
    },
    "mnist-fixed": {
        "data": {"dataset": "mnist", "train_samples": None,
                 "eval_samples": 10000},
        "trainer": {"regime": "fixed", "cbr": 0.3, "epochs": 10},
    },
    "mnist-adaptive": {
        "data": {"dataset": "mnist", "train_samples": None,
                 "eval_samples": 10000},
        "trainer": {"regime": "adaptive", "epochs": 20},
    },
    "cifar-fixed": {
        "data": {"dataset": "cifar10", "train_samples": None,
                 "eval_samples": 10000},
        "trainer": {"regime": "fixed", "cbr": 0.4, "epochs": 50},
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be a section")
            out[key] = _merge(base[key], value, f"{where}.")
        else:
            out[key] = value
    return out


def resolve_config(raw: dict | None = None, preset: str | None = None,
                   overrides: dict | None = None) -> dict:
    """Defaults <- preset <- file values <- CLI overrides, validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    raw = dict(raw or {})
    preset = raw.pop("preset", preset)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: "
                              f"{sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    cfg = _merge(cfg, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def load_config(path, preset: str | None = None,
                overrides: dict | None = None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return resolve_config(raw, preset=preset, overrides=overrides)


def parse_set_overrides(assignments) -> dict:
    """Turn repeated ``section.key=value`` flags into an override tree.

    Values are parsed as JSON when possible, else kept as strings, so
    ``trainer.lr=0.01`` and ``data.dataset=mnist`` both work.
    """
    tree: dict = {}
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set key {key!r} conflicts with an "
                                  "earlier scalar override")
        node[parts[-1]] = parsed
    return tree


def config_echo(cfg: dict) -> str:
    """Canonical serialized form written next to every run's outputs."""
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
