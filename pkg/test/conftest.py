"""
Pytest configuration for the microgrid equivalent tests.

Sets up the environment before any app import and provides shared fixtures.
"""
import os
import sys
import tempfile

import pytest

# Create temp directories FIRST
_temp_dir = tempfile.mkdtemp(prefix="mgeq_test_")
_logs_dir = os.path.join(_temp_dir, "logs")
os.makedirs(_logs_dir, exist_ok=True)

# Set environment BEFORE any app imports
os.environ["LOG_FILE"] = os.path.join(_logs_dir, "test.log")
os.environ["LOG_LEVEL"] = "WARNING"
os.environ["MGEQ_S_BASE"] = "10.0"
os.environ["MGEQ_V_BASE"] = "13.8"
os.environ["MGEQ_F_NOM"] = "60.0"
os.environ["MGEQ_SEED"] = "0"
os.environ["MGEQ_THRESHOLD"] = "0.05"

# Add app to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'app'))

import numpy as np

from services.parameters import ParameterSet
from services.playin_simulator import FaultTemplate, SimConfig, synth_scenario
from utils.timeseries_io import BaseSystem, PccTimeSeries, Window


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end acceptance runs")


def make_series(n=51, dt=0.01, t0=0.0, v=1.0, f=60.0, p=0.0, q=0.0) -> PccTimeSeries:
    """Constant-input series; any channel may also be given as an array."""
    def channel(x):
        return np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    return PccTimeSeries(t0, dt, channel(v), channel(f), channel(p), channel(q))


@pytest.fixture
def base():
    return BaseSystem(10.0, 13.8, 60.0)


@pytest.fixture
def reference_params():
    """Reference parameter set (catalogue defaults)."""
    return ParameterSet.defaults()


@pytest.fixture
def fast_params():
    """Reference set with a slower AVR lag so RK4 at 10 ms stays stable."""
    return ParameterSet.defaults().with_values({"T_a": 0.01})


@pytest.fixture
def fast_cfg():
    return SimConfig(dt_int=0.01, method="rk4", anchor=True)


@pytest.fixture
def sag_series(fast_params, fast_cfg, base):
    """Short synthetic sag: flat until 9.5 s, 0.6 pu for 200 ms, recovery to 10.5 s."""
    template = FaultTemplate(t_fault=9.5, duration=0.2, v_sag=0.6)
    return synth_scenario(fast_params, template, base, Window(9.0, 10.5), 0.01, fast_cfg)


@pytest.fixture
def work_dir(tmp_path):
    path = tmp_path / "work"
    path.mkdir()
    return path
