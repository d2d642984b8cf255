"""Shared fixtures: a tiny trained run reused by CLI/experiment tests.

The checkpoint is session-scoped because training, even at toy sizes,
dominates the suite's wall clock if repeated per test.
"""

import pytest

from semcom.config import resolve_config
from semcom.experiments import run_train


def tiny_overrides(out_dir: str) -> dict:
    """A config small enough that run_train finishes in well under a
    second: 24 synthetic images, an 8-step schedule, 4-channel nets."""
    return {
        "out_dir": out_dir,
        "data": {"dataset": "synthetic", "train_samples": 24,
                 "eval_samples": 8},
        "schedule": {"T": 8, "beta_start": 1e-3, "beta_end": 0.1},
        "encoder": {"conv_channels": [3, 4], "conv_strides": [2, 2]},
        "denoiser": {"base_dim": 4, "dim_mults": [1, 2]},
        "trainer": {"epochs": 1, "batch_size": 8, "cbr": 0.1,
                    "ema_decay": 0.5, "seed": 5},
        "sweep": {"snr_db": [0.0, 10.0], "samples": 4, "seeds": [0]},
    }


@pytest.fixture()
def tiny_config_factory():
    def make(out_dir, **sections):
        raw = tiny_overrides(str(out_dir))
        for name, value in sections.items():
            if isinstance(value, dict):
                raw[name] = {**raw.get(name, {}), **value}
            else:
                raw[name] = value
        return resolve_config(raw)
    return make


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = resolve_config(tiny_overrides(str(out)))
    result = run_train(cfg)
    result["config"] = cfg
    return result
