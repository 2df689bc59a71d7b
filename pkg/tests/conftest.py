import numpy as np
import pytest

from irsmec.chanmodel import ChannelSet


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng, M=3, K=3, N=4, noise=None, q=None) -> ChannelSet:
    """Unit-scale random channels; nicer numerics than the physical link budget."""
    G = crandn(rng, M, N)
    h_r = crandn(rng, K, N)
    h_d = crandn(rng, K, M)
    q = rng.uniform(0.5, 2.0, K) if q is None else np.full(K, float(q))
    noise = rng.uniform(0.1, 1.0) if noise is None else noise
    return ChannelSet(G, h_r, h_d, q, noise)


def random_phi(rng, n, unit=False):
    theta = rng.uniform(0, 2 * np.pi, n)
    kappa = np.ones(n) if unit else np.sqrt(rng.uniform(0, 1, n))
    return kappa * np.exp(1j * theta)


def scalar_channel() -> ChannelSet:
    """M = K = 1, h = 1, q = 1, sigma^2 = 1, no IRS."""
    return ChannelSet(np.zeros((1, 0)), np.zeros((1, 0)), np.ones((1, 1)), np.ones(1), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
