"""
Tests for the Λ-NSE solver.

Validates:
- the Λ(t) schedule envelope, cap and monotonicity
- exact heat decay, invariants and the instability guard
- energy balance, high-mode nonlinearity, R₀ and the regularity tables
- dt self-convergence of the integrating-factor RK4 scheme
"""

import numpy as np
import pytest

from lambda_ci.exceptions import (
    AlignmentError,
    InstabilityError,
    MeanViolationError,
    PreconditionError,
)
from lambda_ci.lambda_nse import (
    LambdaSchedule,
    build_R0,
    energy_balance_residual,
    fit_decay_exponent,
    high_mode_nonlinearity,
    initial_data,
    refinement_convergence,
    regularity_report,
    rough_initial_data,
    shear_flow,
    solve,
    step_times,
    stress_decay_table,
    strong_continuity,
    taylor_green,
    temporal_regularity_report,
)
from lambda_ci.spectral_field import FieldSeries, SpectralField, gradient, norm, random_field, wavenumber_norm

GRID = (16, 16, 16)
NU = 0.05


@pytest.fixture(scope="module")
def heat_run():
    """Shear flow: the nonlinearity vanishes and the solution is pure heat decay."""
    schedule = LambdaSchedule.desk(GRID, T=0.1)
    return solve(shear_flow(GRID), schedule, nu=NU, T=0.1, dt=1e-3, store_every=10)


@pytest.fixture(scope="module")
def tg_run():
    """Weak Taylor-Green flow at low viscosity, with dense stores near t = 0."""
    T = 2.0 ** -3
    schedule = LambdaSchedule.desk(GRID, T=T)
    v0 = taylor_green(GRID) * 0.1
    return solve(v0, schedule, nu=0.005, T=T, dt=2.0 ** -8, geometric_levels=8, store_every=4)


class TestLambdaSchedule:
    """Test suite for Λ(t)."""

    @pytest.fixture
    def schedule(self):
        return LambdaSchedule.desk((32, 32, 32), T=0.5)

    def test_below_power_law(self, schedule):
        """Λ(t) ≤ t^{−1/8} on (0, T]."""
        times = np.geomspace(1e-12, 0.5, 500)
        assert schedule.envelope_violation(times) <= 1e-12

    def test_nonincreasing(self, schedule):
        """Λ never increases in t."""
        values = schedule(np.geomspace(1e-14, 0.5, 2000))
        assert np.all(np.diff(values) <= 1e-14)

    def test_cap_at_zero(self, schedule):
        """At t = 0 the schedule sits at its cap of a quarter grid."""
        assert schedule.cap == 8.0
        assert schedule(0.0) == pytest.approx(8.0, rel=1e-14)

    def test_exact_power_law_away_from_cap(self, schedule):
        """Away from the junction Λ(t) = t^{−1/8} exactly."""
        assert schedule(0.25) == pytest.approx(0.25 ** -0.125, rel=1e-14)

    def test_h3_exponent(self):
        """The regular-data variant grows like t^{−1/10}."""
        schedule = LambdaSchedule.h3((32, 32, 32), T=0.5)
        assert schedule.exponent == pytest.approx(0.1)
        assert schedule(0.25) == pytest.approx(0.25 ** -0.1, rel=1e-14)

    def test_floor_too_high(self):
        """A floor that would bind on (0, T] is rejected."""
        with pytest.raises(PreconditionError, match="floor"):
            LambdaSchedule(cap=8.0, floor=1.0, T=0.5)


class TestInitialData:
    """Test suite for the initial-data generators."""

    @pytest.mark.parametrize("kind", ["taylor_green", "rough", "h3"])
    def test_unit_energy_divergence_free(self, kind):
        """Generated data is unit L², mean-free and divergence-free."""
        v0 = initial_data(kind, GRID, seed=3)
        assert norm(v0, 'Hs', s=0.0) == pytest.approx(1.0, rel=1e-12)
        assert v0.is_mean_free()
        assert v0.is_divergence_free()

    def test_unknown_kind(self):
        """Unknown kinds are rejected."""
        with pytest.raises(PreconditionError, match="unknown initial data"):
            initial_data("vortex_ring", GRID)

    def test_rough_data_band(self):
        """Band-limited rough data keeps only |ξ| ≤ band and stays unit, divergence-free."""
        v0 = rough_initial_data(GRID, seed=3, band=1.0)
        outside = wavenumber_norm(v0.grid_dims) > 1.0
        assert np.abs(v0.coeffs[:, outside]).max() == 0.0
        assert norm(v0, 'Hs', s=0.0) == pytest.approx(1.0, rel=1e-12)
        assert v0.is_divergence_free()
        with pytest.raises(PreconditionError, match="first shell"):
            rough_initial_data(GRID, seed=3, band=0.5)

    def test_step_times_contain_checkpoints(self):
        """The step grid holds the uniform nodes and the geometric checkpoints."""
        times = step_times(1.0, 0.1, 5)
        assert times[0] == 0.0 and times[-1] == 1.0
        for j in range(1, 6):
            assert np.min(np.abs(times - 2.0 ** -j)) < 1e-15
        assert np.all(np.diff(times) > 0)


class TestSolve:
    """Test suite for the time stepper."""

    def test_zero_stays_zero(self):
        """v0 = 0 gives the zero trajectory."""
        run = solve(SpectralField.zeros(GRID), LambdaSchedule.desk(GRID, T=0.01), T=0.01, dt=1e-3)
        assert np.all(run.trajectory.coeffs == 0)

    def test_heat_decay(self, heat_run):
        """A shear mode decays like e^{−4π²νt}."""
        expected = shear_flow(GRID).coeffs * np.exp(-4 * np.pi ** 2 * NU * 0.1)
        final = heat_run.state(len(heat_run.times) - 1).coeffs
        assert np.abs(final - expected).max() <= 1e-8 * np.abs(expected).max()

    def test_initial_state_exact(self, heat_run):
        """u(0) is v0 bit for bit."""
        assert np.array_equal(heat_run.state(0).coeffs, shear_flow(GRID).coeffs)

    def test_geometric_stores(self, heat_run):
        """States are stored at T·2^{−j}."""
        for j in range(1, 9):
            assert np.min(np.abs(heat_run.times - 0.1 * 2.0 ** -j)) < 1e-12

    def test_invariants(self, tg_run):
        """Every stored state is mean-free and divergence-free."""
        for u in tg_run.trajectory.fields():
            assert u.is_mean_free()
            assert u.divergence_defect() < 1e-11

    def test_energy_nonincreasing(self, tg_run):
        """The energy never grows."""
        energy = tg_run.diagnostics['energy'].to_numpy()
        assert np.all(np.diff(energy) <= 1e-14)

    def test_skew_symmetry(self, tg_run):
        """(B_Λ(u), u) vanishes to round-off."""
        assert np.abs(tg_run.diagnostics['skew']).max() < 1e-12

    def test_instability_detected(self):
        """A huge step on strong data is reported as an instability."""
        v0 = taylor_green(GRID) * 1000.0
        with pytest.raises(InstabilityError, match="reduce dt"):
            solve(v0, LambdaSchedule.desk(GRID, T=0.5), T=0.5, dt=0.05)

    def test_mean_rejected(self):
        """Data with a mean is rejected."""
        with pytest.raises(MeanViolationError):
            solve(SpectralField.constant(GRID, [1.0, 0.0, 0.0]), LambdaSchedule.desk(GRID, T=0.1), T=0.1, dt=0.01)

    def test_divergent_rejected(self):
        """Gradient fields are rejected."""
        v0 = gradient(random_field(GRID, 1, seed=1))
        with pytest.raises(PreconditionError, match="divergence-free"):
            solve(v0, LambdaSchedule.desk(GRID, T=0.1), T=0.1, dt=0.01)

    def test_resample_to_grid(self):
        """Data on a coarser grid is zero-padded onto the solver grid."""
        run = solve(shear_flow((8, 8, 8)), LambdaSchedule.desk((8, 8, 8), T=0.01), T=0.01, dt=5e-3, grid=GRID)
        assert run.grid == GRID


class TestEnergyBalance:
    """Test suite for the energy identity."""

    def test_zero_field(self):
        """The zero run has zero residual."""
        run = solve(SpectralField.zeros(GRID), LambdaSchedule.desk(GRID, T=0.01), T=0.01, dt=1e-3)
        assert np.all(energy_balance_residual(run)['balance_residual'] == 0.0)

    def test_heat_run(self, heat_run):
        """The heat semigroup balances to 1e-8."""
        assert energy_balance_residual(heat_run)['balance_residual'].max() < 1e-8

    def test_nonlinear_run(self):
        """A Taylor-Green run balances to 1e-5."""
        run = solve(taylor_green(GRID), LambdaSchedule.desk(GRID, T=0.05), nu=NU, T=0.05, dt=1e-3)
        assert energy_balance_residual(run)['balance_residual'].max() < 1e-5


class TestHighModeNonlinearity:
    """Test suite for ‖P_{≥Λ}(P_{<Λ}u ⊗̊ P_{<Λ}u)‖_{L¹}."""

    def test_vanishes_below_cutoff(self):
        """A shear whose square stays below Λ gives zero."""
        T = 2.0 ** -9
        run = solve(shear_flow(GRID), LambdaSchedule.desk(GRID, T=T), nu=NU, T=T, dt=2.0 ** -12)
        result = high_mode_nonlinearity(run, [T / 4, T / 2, T])
        assert result['table']['sup_stress_L1'].max() < 1e-14

    def test_grows_with_T_star(self, tg_run):
        """The sup over [0, T*] grows from T* = 2⁻⁸ to 2⁻⁴ and is nondecreasing."""
        result = high_mode_nonlinearity(tg_run, [2.0 ** -8, 2.0 ** -6, 2.0 ** -4])
        table = result['table']
        assert result['monotone']
        assert table['sup_stress_L1'].iloc[0] < table['sup_stress_L1'].iloc[-1]
        assert set(result['series'].columns) >= {'t', 'Lambda', 'stress_L1', 'band_L2'}


class TestInitialStress:
    """Test suite for R₀ and its decay table."""

    def test_zero_below_cutoff(self):
        """u entirely below Λ and no noise give R₀ = 0."""
        T = 2.0 ** -9
        run = solve(shear_flow(GRID), LambdaSchedule.desk(GRID, T=T), nu=NU, T=T, dt=2.0 ** -12)
        R0 = build_R0(run)
        assert np.abs(R0.coeffs).max() < 1e-14

    def test_symmetric_traceless(self, tg_run):
        """R₀ is symmetric and traceless."""
        R0 = build_R0(tg_run)
        for i in range(0, len(R0), 5):
            asym, trace = R0.slice(i).symmetry_defect()
            assert asym < 1e-12
            assert trace < 1e-12

    def test_decay_table(self, tg_run):
        """‖R₀‖_{C_{[0,T*]}L¹} is smaller at T* = 2⁻⁸ than at 2⁻³."""
        table = stress_decay_table(build_R0(tg_run), [2.0 ** -8, 2.0 ** -6, 2.0 ** -3])
        values = table['R0_L1'].to_numpy()
        assert np.all(np.diff(values) >= 0)
        assert values[0] < values[-1]

    def test_zero_noise_changes_nothing(self, heat_run):
        """An aligned zero noise series leaves R₀ unchanged."""
        z0 = FieldSeries.zeros(heat_run.times, GRID, 3)
        assert np.abs(build_R0(heat_run, z0).coeffs - build_R0(heat_run).coeffs).max() < 1e-15

    def test_misaligned_noise(self, heat_run):
        """A noise series on other times is rejected."""
        z0 = FieldSeries.zeros(heat_run.times[:-1], GRID, 3)
        with pytest.raises(AlignmentError):
            build_R0(heat_run, z0)

    def test_fit_decay_exponent(self):
        """A stress growing like t^{1/2} fits exponent 1/2."""
        times = 2.0 ** -np.arange(10, -1, -1)
        base = random_field((8, 8, 8), 9, seed=2)
        series = FieldSeries.from_fields(times, [base * np.sqrt(t) for t in times])
        table = stress_decay_table(series, times[::2])
        assert fit_decay_exponent(table) == pytest.approx(0.5, abs=1e-10)

    def test_vanishing_stress_exponent(self):
        """A vanishing stress reports an infinite exponent."""
        series = FieldSeries.zeros([0.0, 0.5, 1.0], (8, 8, 8), 9)
        assert fit_decay_exponent(stress_decay_table(series, [0.5, 1.0])) == float('inf')


class TestRegularityReports:
    """Test suite for the spatial and temporal regularity tables."""

    def test_energy_inequality(self, heat_run):
        """s = 0: the L² norm never exceeds ‖v0‖."""
        table = regularity_report(heat_run, [0.0], [0.01, 0.05, 0.1])['table']
        assert np.all(table['measured'] <= norm(heat_run.v0, 'Hs', s=0.0) * (1 + 1e-12))

    def test_heat_bound(self, heat_run):
        """s = 1: the heat semigroup bound C t^{−1/2}‖v0‖ holds."""
        table = regularity_report(heat_run, [1.0], [0.001, 0.01, 0.1])['table']
        assert np.all(table['measured'] <= table['heat_bound'] * (1 + 1e-12))

    def test_summary_columns(self, tg_run):
        """The summary carries a constant, an exponent and an envelope flag per s."""
        summary = regularity_report(tg_run, [0.0, 1.0, 2.0], [2.0 ** -8, 2.0 ** -6, 2.0 ** -4])['summary']
        assert list(summary['s']) == [0.0, 1.0, 2.0]
        assert summary['envelope_ok'].all()

    def test_temporal_table(self, heat_run):
        """Time-derivative norms are tabulated against their bound shape."""
        table = temporal_regularity_report(heat_run, [0.0, 1.0], [0.01, 0.1])
        assert len(table) == 4
        assert np.all(table['measured'] > 0)
        assert np.all(np.isfinite(table['ratio']))

    def test_strong_continuity(self, heat_run):
        """‖u(t) − v0‖ shrinks as t → 0."""
        result = strong_continuity(heat_run)
        assert result['monotone']
        assert result['table']['distance'].iloc[0] < result['table']['distance'].iloc[-1]


class TestRefinement:
    """Test suite for mesh and step refinement."""

    def test_needs_three_levels(self):
        """Two levels are not enough."""
        with pytest.raises(PreconditionError, match="three"):
            refinement_convergence(shear_flow(GRID), [GRID, GRID], [0.01, 0.005], T=0.02)

    def test_representable_heat_solution(self):
        """A shear mode is resolved identically on every grid."""
        result = refinement_convergence(shear_flow((8, 8, 8)), [(8, 8, 8), (12, 12, 12), GRID], [0.01],
                                        T=0.05)
        assert result['table']['distance'].max() < 1e-13
        assert result['monotone']

    def test_rk4_order(self):
        """Halving dt twice on Taylor-Green shows fourth-order self-convergence."""
        T = 2.0 ** -4
        schedule = LambdaSchedule(cap=1.2, floor=0.5, T=T)
        result = refinement_convergence(taylor_green(GRID), [GRID], [2.0 ** -7, 2.0 ** -8, 2.0 ** -9],
                                        nu=NU, T=T, schedule=schedule, geometric_levels=2, store_every=4)
        assert result['monotone']
        assert 3.5 <= result['table']['order'].iloc[1] <= 4.6
