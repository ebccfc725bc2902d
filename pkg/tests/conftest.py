"""Shared fixtures and the ``--runslow`` switch."""

import matplotlib
import numpy as np
import pytest

matplotlib.use("Agg")

from sslcalib.config import ExperimentConfig
from sslcalib.data.dataset import make_blobs, make_two_moons, split


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow directional experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def moons():
    """Small split two-moons dataset."""
    return split(make_two_moons(240, noise=0.1, seed=0), n_labeled_per_class=4, n_val=40, n_test=60, seed=0)


@pytest.fixture
def blobs():
    """Well separated 3-class blobs."""
    return split(make_blobs(180, centers=3, spread=0.5, seed=1), n_labeled_per_class=5, n_val=30, n_test=45, seed=1)


@pytest.fixture
def tiny_cfg():
    """Config small enough for a run to finish in well under a second."""
    cfg = ExperimentConfig(seed=7)
    cfg.train.total_iterations = 30
    cfg.train.labeled_batch = 4
    cfg.train.unlabeled_batch = 8
    cfg.train.epoch_iterations = 5
    cfg.train.eval_period = 10
    cfg.train.hidden = [16]
    cfg.train.calibration_bins = 10
    cfg.vcc.vae_hidden = [16, 8]
    cfg.vcc.z_dim = 4
    cfg.vcc.warmup_epochs = 1
    cfg.consistency.k_mc = 3
    cfg.consistency.queue_capacity = 64
    cfg.infuse.refresh_period = 2
    cfg.infuse.score_batch_size = 4
    return cfg
