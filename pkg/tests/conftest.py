import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from inrmar import pipeline
from inrmar.config import load_config
from inrmar.geometry import GridSpec, default_parallel

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk_dental.ini"

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def small_grid():
    return GridSpec(64, 64, 1.0)


@pytest.fixture
def small_parallel(small_grid):
    return default_parallel(small_grid, 90, 96)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The desk dental pipeline (fbp, mbhc, inr), run once per session."""
    cfg = load_config(DESK)
    t = time.perf_counter()
    rep = pipeline.run_pipeline(cfg, tmp_path_factory.mktemp("desk"))
    return cfg, rep, time.perf_counter() - t
