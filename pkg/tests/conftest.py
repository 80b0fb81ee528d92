import numpy as np
import pytest

from channel import ChannelSet, ClusterParams, sample_channels
from scenario import SystemConfig, SolverConfig, RngSeed


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_channels(seed: int, F: int, M: int, K: int, scale: float = 1.0) -> ChannelSet:
    """I.i.d. CN(0, scale^2) channels, convenient when geometry does not matter"""
    rng = np.random.default_rng(seed)
    return ChannelSet(G=scale * complex_normal(rng, (F, M)), H=scale * complex_normal(rng, (K, F)))


@pytest.fixture
def tiny_system():
    """M=4 (2x2) antennas, N=2 chains, K=2 users, F=4 (2x2) RIS elements"""
    return SystemConfig(M=4, N=2, K=2, bs_rows=2, bs_cols=2, F1=2, F2=2, sinr_target_db=(10.0,))


@pytest.fixture
def desk_system():
    return SystemConfig(M=16, N=4, K=2, bs_rows=4, bs_cols=4, F1=4, F2=4, sinr_target_db=(10.0,))


@pytest.fixture
def fast_solver():
    return SolverConfig(rho0=1e-2, c=0.7, max_outer=80, max_inner=10, max_rcg_iters=30,
                        randomizations=50, softmin_stages=3)


@pytest.fixture
def cluster_params():
    return ClusterParams()


@pytest.fixture
def tiny_channels(tiny_system, cluster_params):
    return sample_channels(tiny_system, cluster_params, RngSeed(7, 0))
