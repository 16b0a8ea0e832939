import numpy as np
import pytest

from vibrocorr import BathParams, PropagatorConfig, VibronicParams


@pytest.fixture
def small_params():
    """Low-frequency, few-level model so unit tests propagate in milliseconds."""
    return VibronicParams(omega_eg=1000.0, omega_0=100.0, delta=0.8,
                          drive_amp=50.0, n_levels=4, temperature=298.0)


@pytest.fixture
def small_bath():
    return BathParams(eta=20.0, big_lambda=100.0, temperature=298.0, n_matsubara=1)


@pytest.fixture
def small_config():
    return PropagatorConfig(dt_fs=0.25, depth=2, record_stride=4)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_density(rng, dim):
    """Random valid density matrix."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)
