"""
Shared fixtures: small hand datasets, random IV designs and deterministic generators
"""

import numpy as np
import pytest

from estimation.models import Dataset, McConfig
from estimation.services.simulation import simulate_dgp


def make_iv_data(rng, n, p_z=1, extra_x=False, heteroskedastic=False):
    """Linear IV data with a strong first stage; alpha1 = 2"""
    z = rng.normal(loc=1.0, size=(n, p_z))
    v = rng.normal(size=n)
    u = rng.normal(size=n)
    x1 = rng.normal(size=n)
    scale = np.sqrt(1.0 + np.abs(z[:, 0])) if heteroskedastic else 1.0
    d = z.sum(axis=1) + (0.5 * x1 if extra_x else 0.0) + scale * v
    y = 1.0 + 2.0 * d + (0.5 * x1 if extra_x else 0.0) + u + 0.8 * v
    z_labels = tuple(f"z{j + 1}" for j in range(p_z))
    if extra_x:
        return Dataset.from_arrays(y=y, d=d, z=z, x=x1[:, None], z_labels=z_labels)
    return Dataset.from_arrays(y=y, d=d, z=z, z_labels=z_labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iv_data(rng):
    return make_iv_data(rng, 500)


@pytest.fixture
def hand_dataset():
    """n = 3, scalar instrument, constant-only X"""
    return Dataset.from_arrays(
        y=np.array([1.0, 2.0, 4.0]),
        d=np.array([1.0, 3.0, 2.0]),
        z=np.array([0.5, 1.5, 2.0]),
    )


@pytest.fixture
def simulate():
    """Factory: one simulated sample from the Monte Carlo design"""
    def _simulate(n=1000, rep_index=0, **params):
        params.setdefault("seed", 2024)
        return simulate_dgp(McConfig(n=n, replications=1, **params), rep_index)
    return _simulate


@pytest.fixture
def iv_factory(rng):
    """Factory: make_iv_data(n, ...) drawing from the shared generator"""
    def _make(n, **kwargs):
        return make_iv_data(rng, n, **kwargs)
    return _make
