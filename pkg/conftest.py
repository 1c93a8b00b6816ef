"""Shared pytest fixtures: the shipped 6-user system and a 3-user toy system"""
import numpy as np
import pytest

from config import DEFAULT_CODEBOOK, DEFAULT_FACTOR_GRAPH
from utils.scma_model import ChannelGain, Codebook, SystemConfig, load_codebook, load_factor_graph


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical runs, deselect with -m \"not slow\"")


@pytest.fixture
def canonical_config():
    return SystemConfig.canonical()


@pytest.fixture
def canonical_codebook(canonical_config):
    return load_codebook(DEFAULT_CODEBOOK, canonical_config, load_factor_graph(DEFAULT_FACTOR_GRAPH))


@pytest.fixture
def unit_gains():
    return ChannelGain.unit(4)


def make_small_codebook() -> Codebook:
    """J=3, K=2, M=2: users 0 and 2 share resource 0, user 1 is alone on resource 1"""
    config = SystemConfig(users=3, resources=2, codebook_size=2, nonzero_per_codeword=1)
    words = np.zeros((3, 2, 2), dtype=complex)
    words[0, :, 0] = [1.0, -1.0]
    words[1, :, 1] = [1.0, -1.0]
    words[2, :, 0] = [0.5j, -0.5j]
    return Codebook(config=config, codewords=words, supports=((0,), (1,), (0,)))


@pytest.fixture
def small_codebook():
    return make_small_codebook()
