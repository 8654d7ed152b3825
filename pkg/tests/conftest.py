"""
Pytest configuration and shared fixtures for swnet tests.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from swnet.config import RunConfig  # noqa: E402
from swnet.data import SynthConfig, generate_synthetic  # noqa: E402


@pytest.fixture(autouse=True)
def seeded():
    """Fixed global RNG state for every test."""
    np.random.seed(0)
    torch.manual_seed(0)
    yield


@pytest.fixture(autouse=True)
def reset_swnet_logger():
    """Drop handlers installed by setup_logging so tests do not leak files."""
    yield
    package_logger = logging.getLogger("swnet")
    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)
        handler.close()


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(n_samples=10, size=64, nir_gap=0.4, seed=7)


@pytest.fixture
def synth_root(tmp_path, tiny_synth) -> Path:
    """Ten 64×64 synthetic samples on disk (8 train / 2 test)."""
    root = tmp_path / "synth"
    generate_synthetic(tiny_synth, root)
    return root


@pytest.fixture
def desk_config(tmp_path, synth_root) -> RunConfig:
    """Desk-scale config training for one epoch on the tiny dataset."""
    return RunConfig(
        seed=3,
        input_side=64,
        batch_size=4,
        epochs=1,
        lr=1e-3,
        data_root=synth_root,
        out_dir=tmp_path / "run",
        log_every=1,
    )
