"""Shared fixtures for the lambda_ci test-suite"""

import numpy as np
import pytest

from lambda_ci.geometry import build_wavevector_set
from lambda_ci.jets import build_profiles
from lambda_ci.spectral_field import SpectralField, random_field, wavenumbers


@pytest.fixture(scope="session")
def wave_set():
    return build_wavevector_set()


@pytest.fixture(scope="session")
def profiles():
    return build_profiles(4096)


@pytest.fixture
def small_grid():
    return (8, 8, 8)


@pytest.fixture
def random_vector(small_grid):
    def make(seed=0, divergence_free=False, slope=None, grid=None):
        return random_field(grid or small_grid, 3, seed=seed, slope=slope, divergence_free=divergence_free)
    return make


def single_mode(grid, xi0, amplitude=1.0, component=None, n_components=1):
    """amplitude·e^{2πiξ₀·x} + c.c. in one component (all components for scalars)"""
    coeffs = np.zeros((n_components,) + tuple(grid), dtype=complex)
    idx = tuple(int(x) % n for x, n in zip(xi0, grid))
    neg = tuple(int(-x) % n for x, n in zip(xi0, grid))
    targets = range(n_components) if component is None else [component]
    for c in targets:
        coeffs[(c,) + idx] += amplitude
        coeffs[(c,) + neg] += np.conj(amplitude)
    return SpectralField(coeffs)


@pytest.fixture
def mode():
    return single_mode
