"""Shared test configuration: single-threaded torch and headless plotting."""

import os

os.environ.setdefault("MPLBACKEND", "Agg")

import pytest
import torch

torch.set_num_threads(1)

# smallest config that still exercises every pipeline stage
TINY_CONFIG = {
    "seed": 3,
    "dataset": {"test": 2, "labeled": 2, "unlabeled": 3, "val": 2},
    "diffusion": {
        "epochs": 1,
        "T": 24,
        "steps": 6,
        "per_class": 1,
        "base_channels": 8,
        "cond_dim": 16,
    },
    "train": {"epochs_sup": 1, "epochs_total": 2, "ramp_epochs": 0, "batch_size": 8},
    "filter": {"epochs": 2},
}


@pytest.fixture(scope="session")
def tiny_cfg():
    from dsym.config import config_from_dict

    return config_from_dict(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_run(tiny_cfg, tmp_path_factory):
    """One fully executed tiny run shared by every module that needs one."""
    from dsym.experiments import execute_run

    out = tmp_path_factory.mktemp("tiny_run") / "run"
    return execute_run(tiny_cfg, out)
