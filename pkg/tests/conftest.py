import json
import os
from datetime import datetime

import numpy as np
import pytest

from ptyinr.config import HashGridConfig, NetworksConfig, SirenConfig
from ptyinr.physics import make_scan_grid, simulate_intensity
from ptyinr.simulate import focused_probe

# --- Configuration ---
TESTS_OUTPUT_DIR = os.path.dirname(__file__)
REPO_ROOT = os.path.dirname(TESTS_OUTPUT_DIR)
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")

# --- Global performance tracking ---
performance_data = {
    "test_run": datetime.now().isoformat(),
    "tests": {}
}


def add_performance_data(test_name, metrics):
    """Add performance data for a specific test."""
    performance_data["tests"][test_name] = {
        "timestamp": datetime.now().isoformat(),
        "metrics": metrics
    }


def pytest_sessionfinish(session, exitstatus):
    if not performance_data["tests"]:
        return
    report_path = os.path.join(TESTS_OUTPUT_DIR, "performance_report.json")
    with open(report_path, "w") as f:
        json.dump(performance_data, f, indent=2)


@pytest.fixture
def record_performance():
    return add_performance_data


# --- Shared fixtures ---

@pytest.fixture
def tiny_networks():
    return NetworksConfig(
        siren=SirenConfig(hidden_layers=1, hidden_width=16),
        hashgrid=HashGridConfig(levels=3, table_size_log2=8, base_resolution=2,
                                mlp_hidden_layers=1, mlp_hidden_width=8),
    )


@pytest.fixture
def toy_dataset():
    """16x16 random object, 8x8 focused probe, 9 positions, noise-free."""
    gen = np.random.default_rng(7)
    obj = (0.5 + 0.5 * gen.uniform(size=(16, 16))) * np.exp(1j * gen.uniform(0, 1, size=(16, 16)))
    probe = focused_probe((8, 8))
    grid = make_scan_grid((16, 16), (8, 8), (4, 4))
    return simulate_intensity(obj, probe, grid), obj, probe


@pytest.fixture
def config_dir():
    return CONFIG_DIR
