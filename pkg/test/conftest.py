import sys
from pathlib import Path

# Ensure `src/` is on sys.path so tests can import project modules
ROOT = Path(__file__).resolve().parent.parent
SRC = ROOT / 'src'
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))


import numpy as np
import pytest
from binloop.model import PipelineConfig, RetrievalParams
from test.test_helpers import random_scene, write_sequence


@pytest.fixture
def rng():
    """Seeded generator so every test sees the same random data."""
    return np.random.default_rng(1234)


@pytest.fixture
def open_retrieval():
    """Retrieval parameters with the centroid filter and temporal gate out of the way."""
    return RetrievalParams(xi_min=0.05, centroid_max=1.0, temporal_gap=0, max_candidates=1000)


@pytest.fixture
def make_sequence(tmp_path):
    """Factory writing frames (and optional poses) under tmp_path; returns the manifest path."""
    def _factory(frames, positions=None, name='seq'):
        return write_sequence(tmp_path / name, frames, positions)
    return _factory


@pytest.fixture
def duplicate_loop_sequence(make_sequence):
    """Nine distinct scenes, frame 8 a pixel-identical copy of frame 0."""
    gen = np.random.default_rng(99)
    frames = [random_scene(gen) for _ in range(8)]
    frames.append(frames[0].copy())
    return make_sequence(frames, name='dup')


@pytest.fixture
def default_config():
    return PipelineConfig()
