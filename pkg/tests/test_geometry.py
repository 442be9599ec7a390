"""
Tests for the rational direction set and the γ_(k) decomposition.

Validates:
- frame orthonormality, N_Λ and spanning of Sym(3)
- exact reconstruction and positivity inside the certified radius
- admissibility gate and certificate monotonicity
"""

import numpy as np
import pytest

from lambda_ci.exceptions import AdmissibilityError, PreconditionError
from lambda_ci.geometry import (
    admissible_c_star,
    certify_radius,
    frame_table,
    gamma_squared,
    reconstruct,
    sample_directions,
)


class TestWaveVectorSet:
    """Test suite for the built-in frames."""

    def test_six_orthonormal_frames(self, wave_set):
        """Every frame is orthonormal to 1e-14."""
        assert len(wave_set) == 6
        for frame in wave_set.entries:
            assert frame.orthonormality_residual() < 1e-14

    def test_n_lambda(self, wave_set):
        """N_Λ = 5 integerizes every frame vector."""
        assert wave_set.n_lambda == 5
        for frame in wave_set.entries:
            assert np.allclose(5 * frame.k, frame.k_int, atol=1e-14)
            assert np.allclose(5 * frame.k2, frame.k2_int, atol=1e-14)

    def test_basis_full_rank(self, wave_set):
        """The six k₁⊗k₁ span the symmetric matrices."""
        assert np.linalg.matrix_rank(wave_set.basis_matrix) == 6
        assert np.isfinite(wave_set.condition_number)

    def test_positive_radius(self, wave_set):
        """The certificate is positive and gives a positive c_*."""
        assert wave_set.eps_u > 0
        assert wave_set.m_star > 0
        assert 0 < admissible_c_star(wave_set) <= 0.5

    def test_frame_table(self, wave_set):
        """The dump table has one row per frame."""
        table = frame_table(wave_set)
        assert len(table) == 6
        assert set(table['n_lambda']) == {5}


class TestGammaSquared:
    """Test suite for the coefficient solve."""

    def test_identity(self, wave_set):
        """S = Id reconstructs with equal positive coefficients."""
        c = gamma_squared(np.eye(3), wave_set)
        assert np.all(c > 0)
        assert np.allclose(c, 0.5, atol=1e-14)
        assert np.abs(reconstruct(c, wave_set) - np.eye(3)).max() < 1e-12

    def test_random_admissible(self, wave_set):
        """100 random admissible S reconstruct exactly with positive coefficients."""
        E = sample_directions(1000, seed=11)[:100]
        S = np.eye(3) + 0.5 * wave_set.eps_u * E
        c = gamma_squared(S, wave_set)
        assert np.all(c > 0)
        assert np.linalg.norm(reconstruct(c, wave_set) - S, axis=(-2, -1)).max() < 1e-12

    def test_affine_in_t(self, wave_set):
        """gamma_squared(Id + tE) is affine in t."""
        E = sample_directions(1000, seed=3)[0]
        t = np.array([0.0, 0.3, 0.6]) * wave_set.eps_u
        c = gamma_squared(np.eye(3) + t[:, None, None] * E, wave_set)
        assert np.abs(c[2] - 2 * c[1] + c[0]).max() < 1e-14

    def test_outside_radius(self, wave_set):
        """‖S − Id‖ = 2ε_u is rejected."""
        E = sample_directions(1000, seed=5)[0]
        with pytest.raises(AdmissibilityError, match="admissibility radius"):
            gamma_squared(np.eye(3) + 2 * wave_set.eps_u * E, wave_set)

    def test_bad_shape(self, wave_set):
        """Non-3×3 input is rejected."""
        with pytest.raises(PreconditionError):
            gamma_squared(np.eye(2), wave_set)


class TestCertifyRadius:
    """Test suite for the sampled certificate."""

    def test_too_few_samples(self, wave_set):
        """n_samples = 0 is a precondition error."""
        with pytest.raises(PreconditionError, match="at least"):
            certify_radius(wave_set, 0)

    def test_monotone_in_samples(self, wave_set):
        """More samples never enlarge the certified radius."""
        small, _ = certify_radius(wave_set, 1000)
        large, _ = certify_radius(wave_set, 10_000)
        assert large <= small

    def test_nested_samples(self):
        """Sample sets are nested in their size."""
        assert np.array_equal(sample_directions(1000, 2), sample_directions(2500, 2)[:1000])
