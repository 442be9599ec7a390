"""
Tests for the periodic field algebra.

Validates:
- physical/spectral transforms and the Nyquist convention
- cutoff, band, mean and Leray projections
- inverse divergence and the stationary-phase sweep
- calculus multipliers and dealiased products
- norms and the spatial mollifier
"""

import numpy as np
import pytest

from lambda_ci.exceptions import DimensionError, MeanViolationError, ShapeMismatchError
from lambda_ci.spectral_field import (
    CutoffProfile,
    FieldSeries,
    SpectralField,
    curl,
    divergence,
    from_physical,
    gradient,
    inverse_divergence,
    laplacian,
    leray_project,
    max_wavenumber,
    mollify_space,
    norm,
    outer_product,
    project_band,
    project_below,
    project_nonzero,
    random_field,
    smooth_step,
    to_physical,
    traceless_part,
    verify_stationary_phase,
)


def l2(f):
    return norm(f, 'Hs', s=0.0)


class TestTransforms:
    """Test suite for to_physical / from_physical."""

    def test_constant_field(self):
        """A constant field samples to the constant."""
        f = SpectralField.constant((8, 8, 8), [2.5])
        assert np.allclose(to_physical(f), 2.5, atol=1e-15)

    def test_single_mode_matches_cosine(self, mode):
        """A single mode plus its conjugate samples to 2cos(2πξ₀·x)."""
        grid = (8, 8, 8)
        f = mode(grid, (1, 2, -3))
        x = np.stack(np.meshgrid(*[np.arange(n) / n for n in grid], indexing='ij'))
        expected = 2.0 * np.cos(2 * np.pi * (x[0] + 2 * x[1] - 3 * x[2]))
        assert np.abs(to_physical(f)[0] - expected).max() < 1e-12

    def test_round_trip(self):
        """Spectral → physical → spectral is the identity on represented modes."""
        f = random_field((8, 8, 8), 3, seed=3)
        back = from_physical(to_physical(f))
        assert np.abs(back.coeffs - f.coeffs).max() / f.max_abs() < 1e-12

    def test_oversampled_round_trip(self):
        """Oversampled samples transform back to the same coefficients."""
        f = random_field((8, 8, 8), 1, seed=4)
        back = from_physical(to_physical(f, 2), (8, 8, 8))
        assert np.abs(back.coeffs - f.coeffs).max() < 1e-13

    def test_direct_dft_oracle(self):
        """Coefficients agree with a direct DFT sum at 8³."""
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((8, 8, 8))
        f = from_physical(samples)
        x = np.stack(np.meshgrid(*[np.arange(8) / 8] * 3, indexing='ij'))
        for xi in [(1, 0, 0), (2, -1, 3), (0, 3, -2)]:
            phase = np.exp(-2j * np.pi * sum(k * xx for k, xx in zip(xi, x)))
            direct = (samples * phase).mean()
            assert abs(f.coeffs[(0,) + tuple(k % 8 for k in xi)] - direct) < 1e-12

    def test_nyquist_planes_zero(self):
        """from_physical leaves the Nyquist planes empty."""
        f = from_physical(np.random.default_rng(1).standard_normal((8, 8, 8)))
        assert np.all(f.coeffs[0, 4] == 0)
        assert np.all(f.coeffs[0, :, 4] == 0)

    def test_hermitian_output(self):
        """Transforms of real samples are Hermitian symmetric."""
        f = random_field((8, 6, 10), 3, seed=2)
        assert f.hermitian_defect() < 1e-14

    def test_grid_too_small(self):
        """Requesting more modes than the samples hold is a dimension error."""
        with pytest.raises(DimensionError, match="too small"):
            from_physical(np.zeros((8, 8, 8)), (16, 16, 16))

    def test_bad_oversample(self):
        """Oversample must be a positive integer."""
        with pytest.raises(DimensionError):
            to_physical(SpectralField.zeros((8, 8, 8), 1), 0)

    def test_odd_grid_rejected(self):
        """Grid dims must be even."""
        with pytest.raises(DimensionError, match="even"):
            SpectralField.zeros((7, 8, 8), 1)


class TestCutoffProfile:
    """Test suite for the smooth radial cutoff."""

    def test_exact_values(self):
        """Profile is exactly 1 below 1 and exactly 0 from 2 on."""
        profile = CutoffProfile()
        assert np.all(profile(np.linspace(0, 0.999, 50)) == 1.0)
        assert np.all(profile(np.linspace(2.0, 5.0, 50)) == 0.0)

    def test_monotone_and_bounded(self):
        """Profile decreases monotonically and stays in [0, 1]."""
        values = CutoffProfile()(np.linspace(0, 3, 3001))
        assert np.all(np.diff(values) <= 1e-15)
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_derivative_bound_finite(self):
        """Finite-difference derivative bound up to order 4 is finite and at least 1."""
        bound = CutoffProfile().derivative_bound
        assert np.isfinite(bound) and bound >= 1.0

    def test_smooth_step_symmetry(self):
        """smooth_step(t) + smooth_step(1 − t) = 1."""
        t = np.linspace(-0.5, 1.5, 101)
        assert np.allclose(smooth_step(t) + smooth_step(1 - t), 1.0, atol=1e-15)


class TestProjections:
    """Test suite for the Fourier projections."""

    def test_project_below_large_cutoff_identity(self):
        """Λ ≥ 2·Nyquist leaves the field unchanged."""
        f = random_field((8, 8, 8), 3, seed=5)
        out = project_below(f, 8.0)
        assert np.array_equal(out.coeffs, f.coeffs)

    def test_project_below_kills_high_mode(self, mode):
        """A mode with |ξ₀| = 3Λ is removed."""
        f = mode((16, 16, 16), (6, 0, 0))
        assert project_below(f, 2.0).max_abs() == 0.0

    def test_project_below_contracts(self):
        """‖P_{<Λ}f‖ ≤ ‖f‖ on random fields."""
        for seed in range(50):
            f = random_field((8, 8, 8), 3, seed=seed)
            assert l2(project_below(f, 1.7)) <= l2(f) + 1e-14

    def test_nonzero_projection_of_constant(self):
        """P_{≠0} of a constant vanishes."""
        assert project_nonzero(SpectralField.constant((8, 8, 8), [1.0, 2.0, 3.0])).max_abs() == 0.0

    def test_smooth_band_telescopes(self):
        """P_{<Λ} = P_{<Λ/6} + smooth band [Λ/6, 2Λ]."""
        f = random_field((16, 16, 16), 3, seed=6)
        lam = 4.0
        rebuilt = project_below(f, lam / 6) + project_band(f, lam / 6, 2 * lam, sharp=False)
        assert np.abs(rebuilt.coeffs - project_below(f, lam).coeffs).max() < 1e-15

    def test_sharp_band_pythagoras(self):
        """‖P_{≥k}f‖² + ‖P_{<k}f‖² = ‖f‖² for the sharp split."""
        f = random_field((16, 16, 16), 3, seed=7)
        high = project_band(f, 3.0, sharp=True)
        low = project_band(f, 0.0, 3.0, sharp=True)
        assert l2(high) ** 2 + l2(low) ** 2 == pytest.approx(l2(f) ** 2, rel=1e-13)

    def test_band_bounds_checked(self):
        """lo must be below hi."""
        with pytest.raises(ValueError, match="lo < hi"):
            project_band(SpectralField.zeros((8, 8, 8), 1), 3.0, 2.0)

    def test_leray_fixes_divergence_free(self):
        """Divergence-free input is unchanged."""
        f = random_field((8, 8, 8), 3, seed=8, divergence_free=True)
        assert np.abs(leray_project(f).coeffs - f.coeffs).max() < 1e-14

    def test_leray_kills_gradient(self):
        """P_H ∇g = 0."""
        g = random_field((8, 8, 8), 1, seed=9)
        assert leray_project(gradient(g)).max_abs() < 1e-12

    def test_leray_contracts_and_is_idempotent(self):
        """P_H is an orthogonal projection."""
        for seed in range(50):
            f = random_field((8, 8, 8), 3, seed=seed)
            once = leray_project(f)
            assert l2(once) <= l2(f) + 1e-14
            assert np.abs(leray_project(once).coeffs - once.coeffs).max() < 1e-14
            assert once.is_divergence_free()

    def test_projections_commute(self):
        """P_H, P_{<Λ} and P_{≠0} commute pairwise."""
        f = random_field((8, 8, 8), 3, seed=10)
        a = leray_project(project_below(project_nonzero(f), 2.5))
        b = project_nonzero(project_below(leray_project(f), 2.5))
        c = project_below(project_nonzero(leray_project(f)), 2.5)
        assert np.abs(a.coeffs - b.coeffs).max() < 1e-13
        assert np.abs(a.coeffs - c.coeffs).max() < 1e-13

    def test_linearity(self):
        """Operators are linear."""
        f = random_field((8, 8, 8), 3, seed=11)
        g = random_field((8, 8, 8), 3, seed=12)
        lhs = leray_project(2.0 * f + (-3.0) * g)
        rhs = 2.0 * leray_project(f) - 3.0 * leray_project(g)
        assert np.abs(lhs.coeffs - rhs.coeffs).max() < 1e-13


class TestInverseDivergence:
    """Test suite for the inverse-divergence operator."""

    def test_zero(self):
        """R 0 = 0."""
        assert inverse_divergence(SpectralField.zeros((8, 8, 8), 3)).max_abs() == 0.0

    def test_single_mode_identity(self, mode):
        """div(Rv) = v for one mode."""
        v = mode((8, 8, 8), (1, 2, 0), component=2, n_components=3)
        R = inverse_divergence(v)
        assert np.abs(divergence(R).coeffs - v.coeffs).max() < 1e-13

    def test_random_symmetric_traceless(self):
        """Output is symmetric, traceless and inverts the divergence."""
        v = random_field((8, 8, 8), 3, seed=13)
        R = inverse_divergence(v)
        assert R.is_symmetric_traceless()
        assert np.abs(divergence(R).coeffs - v.coeffs).max() < 1e-13
        assert R.hermitian_defect() < 1e-14

    def test_mean_violation(self):
        """A nonzero mean is rejected."""
        v = SpectralField.constant((8, 8, 8), [1.0, 0.0, 0.0])
        with pytest.raises(MeanViolationError, match="mean-free"):
            inverse_divergence(v)

    def test_stationary_phase_decay(self):
        """Smoothing a·P_{≥k}f by |∇|^{-1} decays at least like k^{-0.9}."""
        grid = (256, 4, 4)
        x = np.arange(256) / 256
        a_samples = np.broadcast_to((1.0 + 0.5 * np.cos(2 * np.pi * x))[:, None, None], grid)
        a = from_physical(a_samples[None].copy())
        f = random_field(grid, 1, seed=14)
        result = verify_stationary_phase(a, f, [8, 16, 32, 64], p=2.0)
        assert result['fitted_exponent'] <= -0.9


class TestCalculus:
    """Test suite for the differential operators and products."""

    def test_div_curl_zero(self):
        """div∘curl = 0."""
        f = random_field((8, 8, 8), 3, seed=15)
        assert divergence(curl(f)).max_abs() < 1e-12

    def test_laplacian_eigenvalue(self, mode):
        """Δ e^{2πiξ₀·x} = −4π²|ξ₀|² e^{2πiξ₀·x}."""
        f = mode((8, 8, 8), (1, -2, 3))
        assert np.allclose(laplacian(f).coeffs, -4 * np.pi ** 2 * 14 * f.coeffs, atol=1e-12)

    def test_traceless_part_pointwise(self):
        """tr(traceless_part(T)) = 0 at every grid point."""
        for seed in range(50):
            T = random_field((8, 8, 8), 9, seed=seed)
            samples = to_physical(traceless_part(T)).reshape((3, 3, 8, 8, 8))
            assert np.abs(samples[0, 0] + samples[1, 1] + samples[2, 2]).max() < 1e-14

    def test_outer_product_exact_for_band_limited(self, mode):
        """Dealiased product of two modes matches the analytic product."""
        grid = (8, 8, 8)
        u = mode(grid, (1, 0, 0), component=0, n_components=3)
        v = mode(grid, (0, 1, 0), component=1, n_components=3)
        prod = outer_product(u, v)
        expected = to_physical(u)[0] * to_physical(v)[1]
        assert np.abs(to_physical(prod)[1] - expected).max() < 1e-13

    def test_shape_mismatch(self):
        """Products across grids are rejected."""
        with pytest.raises(ShapeMismatchError):
            outer_product(SpectralField.zeros((8, 8, 8), 3), SpectralField.zeros((4, 4, 4), 3))


class TestNorms:
    """Test suite for field norms."""

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.5, np.inf])
    def test_constant(self, p):
        """‖c‖_{L^p} = |c|."""
        f = SpectralField.constant((8, 8, 8), [-1.5])
        assert norm(f, 'Lp', p=p) == pytest.approx(1.5, rel=1e-14)

    def test_cosine(self, mode):
        """‖2cos(2πx·ξ₀)‖_{L²} = √2."""
        assert norm(mode((8, 8, 8), (1, 1, 0)), 'Lp', p=2) == pytest.approx(np.sqrt(2), rel=1e-14)

    def test_quadrature_matches_plancherel(self):
        """Quadrature L² equals the coefficient sum."""
        for seed in range(50):
            f = random_field((8, 8, 8), 3, seed=seed)
            assert norm(f, 'Lp', p=2) == pytest.approx(l2(f), rel=1e-10)

    def test_bessel_norm_dominates_l1(self):
        """The W^{1−δ,1} proxy dominates L¹ for mean-free fields."""
        f = random_field((8, 8, 8), 1, seed=16)
        assert norm(f, 'Ws1', delta=0.1) >= norm(f, 'Lp', p=1)

    def test_unknown_kind(self):
        """Unknown norm kinds are rejected."""
        with pytest.raises(ValueError, match="unknown norm"):
            norm(SpectralField.zeros((8, 8, 8), 1), 'BMO')


class TestMollifier:
    """Test suite for the spatial mollifier."""

    def test_constants_fixed(self):
        """The kernel has unit mass."""
        f = SpectralField.constant((16, 16, 16), [3.0])
        assert np.abs(mollify_space(f, 0.1).coeffs - f.coeffs).max() < 1e-14

    def test_monotone_convergence(self):
        """‖f_ℓ − f‖ decreases as ℓ shrinks."""
        f = project_band(random_field((16, 16, 16), 3, seed=17), 0.0, 3.0)
        errors = [l2(mollify_space(f, ell) - f) for ell in (1 / 8, 1 / 16, 1 / 32)]
        assert errors[0] > errors[1] > errors[2] > 0

    def test_high_mode_attenuated(self, mode):
        """|ξ₀| ≫ 1/ℓ is damped by more than a factor 10."""
        f = mode((32, 32, 32), (12, 0, 0))
        assert mollify_space(f, 0.25).max_abs() < 0.1 * f.max_abs()


class TestFieldSeries:
    """Test suite for time series of fields."""

    def test_constant_series_slices(self):
        """A constant series returns its slice for every index."""
        f = random_field((8, 8, 8), 3, seed=19)
        series = FieldSeries.constant([0.0, 0.5, 1.0], f)
        assert series.is_constant and len(series) == 3
        assert np.array_equal(series.slice(2).coeffs, f.coeffs)
        assert series.materialize().coeffs.shape[0] == 3

    def test_misaligned_series(self):
        """Slice count must match the times."""
        with pytest.raises(DimensionError):
            FieldSeries(np.arange(3.0), np.zeros((2, 1, 8, 8, 8)))

    def test_max_wavenumber(self):
        """Largest represented |ξ| on 8³ is 3√3."""
        assert max_wavenumber((8, 8, 8)) == pytest.approx(3 * np.sqrt(3))
