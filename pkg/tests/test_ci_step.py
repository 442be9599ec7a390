"""
Tests for one convex-integration step.

Validates:
- the cut-off, its derivatives and its bounds
- causal temporal mollification and history handling
- amplitudes, velocity cancellation and the perturbations
- the assembled u_{q+1}, R_{q+1} and the closure of the relaxed system
- causality of the whole step and the exponent reports
"""

import numpy as np
import pytest

from lambda_ci.ci_step import (
    COMPONENTS,
    AmplitudeSlice,
    ConvexIntegrationStep,
    CutoffChi,
    IterationState,
    StepJets,
    amplitudes,
    component_norm_report,
    derivative_stencil,
    energy_gap_report,
    energy_offset,
    lebesgue_exponent,
    mollify_stress,
    perturbation_norm_report,
    perturbations,
    predicted_perturbation_exponents,
    residual,
    steady_toy_state,
    time_kernel,
)
from lambda_ci.exceptions import (
    AlignmentError,
    EnergyBandError,
    HistoryError,
    OrderingError,
    PreconditionError,
    RegressionError,
    ResolutionError,
    TimeSamplingError,
)
from lambda_ci.geometry import admissible_c_star
from lambda_ci.lambda_nse import taylor_green
from lambda_ci.schedule import LevelSlice
from lambda_ci.spectral_field import (
    FieldSeries,
    SpectralField,
    gradient,
    inverse_divergence,
    mollify_space,
    norm,
    project_nonzero,
    random_field,
    traceless_outer,
)

GRID = (12, 12, 12)
NU = 0.05
TIMES = np.linspace(0.0, 0.0024, 97)
ELL = 5e-5


@pytest.fixture(scope="module")
def level(wave_set):
    return LevelSlice(q=0, T_q=0.0024, T_next=0.002, T_after_next=0.001, delta_next=1.0,
                      delta_after_next=0.1, delta_third=1e-4, lambda_next=8.0, ell=ELL,
                      c_star=admissible_c_star(wave_set))


@pytest.fixture(scope="module")
def state(level):
    return steady_toy_state(taylor_green(GRID) * 1e-3, NU, TIMES, level)


@pytest.fixture(scope="module")
def step(state, wave_set, profiles):
    return ConvexIntegrationStep(state, 8.0, wave_set=wave_set, profiles=profiles, store_every=8)


@pytest.fixture(scope="module")
def result(step):
    return step.run()


def stress(seed, grid=GRID, scale=0.1):
    return inverse_divergence(project_nonzero(random_field(grid, 3, seed=seed))) * scale


class TestCutoff:
    """Test suite for χ_{q+1}"""

    @pytest.fixture
    def chi(self):
        return CutoffChi(0.002, 0.001)

    def test_values(self, chi):
        """0 up to the midpoint, 1 from T_{q+1} on, nondecreasing between."""
        assert chi(0.0) == 0.0 and chi(0.0015) == 0.0
        assert chi(0.002) == 1.0 and chi(0.003) == 1.0
        values = chi(np.linspace(0.001, 0.0024, 500))
        assert np.all(np.diff(values) >= 0)

    def test_derivatives_match_differences(self, chi):
        """The closed-form derivatives agree with central differences."""
        t = np.linspace(chi.start + 0.1 * chi.width, chi.T_next - 0.1 * chi.width, 50)
        h = 1e-8
        first = (chi(t + h) - chi(t - h)) / (2 * h)
        assert np.allclose(chi.derivative(t), first, rtol=1e-4, atol=1e-4 * np.abs(first).max())
        second = (chi.derivative(t + h) - chi.derivative(t - h)) / (2 * h)
        assert np.allclose(chi.derivative(t, 2), second, rtol=1e-4, atol=1e-4 * np.abs(second).max())

    def test_derivative_vanishes_outside(self, chi):
        """χ' is exactly zero where χ is constant."""
        assert chi.derivative(0.0005) == 0.0
        assert chi.derivative(0.0021) == 0.0

    def test_ordering(self):
        """T_{q+2} must lie below T_{q+1}."""
        with pytest.raises(OrderingError):
            CutoffChi(0.001, 0.002)

    def test_bounds(self, chi):
        """sup|χ| = 1 and the derivative constants are finite."""
        table = chi.bounds(ELL)
        assert table['N'].tolist() == [0, 1, 2]
        assert table.loc[0, 'sup'] == 1.0
        assert np.all(np.isfinite(table['constant'])) and np.all(table['constant'] > 0)


class TestStencils:
    """Test suite for the time-derivative stencils and the kernel"""

    def test_quartic_exact(self):
        """Every stencil differentiates quartics exactly."""
        dt = 0.1
        t = np.arange(9) * dt
        f = t ** 4 - 2 * t ** 2 + t
        for i in range(9):
            offsets, weights = derivative_stencil(i, 9)
            estimate = sum(w * f[i + o] for o, w in zip(offsets, weights)) / dt
            assert estimate == pytest.approx(4 * t[i] ** 3 - 4 * t[i] + 1, abs=1e-10)

    def test_causal_needs_history(self):
        """The backward stencil needs four past slices."""
        with pytest.raises(HistoryError):
            derivative_stencil(2, 10, causal=True)
        offsets, _ = derivative_stencil(4, 10, causal=True)
        assert max(offsets) == 0

    def test_too_few_slices(self):
        with pytest.raises(PreconditionError):
            derivative_stencil(0, 4)

    def test_kernel(self):
        """Taps lie strictly in the past and carry unit mass."""
        offsets, weights = time_kernel(ELL, 1e-5)
        assert offsets.tolist() == [1, 2, 3, 4]
        assert weights.sum() == pytest.approx(1.0)
        assert np.all(weights > 0)

    def test_kernel_resolution(self):
        """A grid coarser than ℓ/2 is rejected."""
        with pytest.raises(PreconditionError, match="finer than"):
            time_kernel(ELL, 3e-5)


class TestMollifyStress:
    """Test suite for R_ℓ"""

    DT = 1e-5

    @pytest.fixture
    def jump(self):
        times = np.arange(41) * self.DT
        S = stress(1, grid=(8, 8, 8))
        coeffs = np.stack([S.coeffs * float(i >= 20) for i in range(41)])
        return FieldSeries(times, coeffs), S

    def test_constant_series(self):
        """A constant stress is only mollified in space."""
        S = stress(3, grid=(8, 8, 8))
        out = mollify_stress(FieldSeries.constant(np.arange(10) * self.DT, S), ELL)
        assert np.array_equal(out.slice(5).coeffs, mollify_space(S, ELL).coeffs)

    def test_step_is_causal(self, jump):
        """A jump at t₀ leaves R_ℓ zero up to and including t₀."""
        series, S = jump
        out = mollify_stress(series, ELL)
        assert out.times[0] == series.times[4]
        for k, t in enumerate(out.times):
            if t <= series.times[20]:
                assert np.all(out.slice(k).coeffs == 0)
        assert np.allclose(out.slice(len(out) - 1).coeffs, mollify_space(S, ELL).coeffs, atol=1e-14)

    def test_history(self, jump):
        """Times whose kernel reaches before t=0 need an explicit extension."""
        series, _ = jump
        with pytest.raises(HistoryError):
            mollify_stress(series, ELL, from_time=0.0)
        extended = mollify_stress(series, ELL, history='constant', from_time=0.0)
        assert len(extended) == len(series)

    def test_future_does_not_leak(self, jump):
        """Changing R_q after t* leaves R_ℓ up to t* bit-identical."""
        series, _ = jump
        changed = series.coeffs.copy()
        changed[30:] *= 3.0
        a = mollify_stress(series, ELL)
        b = mollify_stress(FieldSeries(series.times, changed), ELL)
        for k, t in enumerate(a.times):
            if t <= series.times[30]:
                assert np.array_equal(a.slice(k).coeffs, b.slice(k).coeffs)


class TestEnergyOffset:
    """Test suite for f_q"""

    def test_pieces(self, level):
        t = np.array([0.0, 0.00104, 0.00106, 0.0019, 0.002, 0.0024])
        f = energy_offset(t, level)
        assert np.allclose(f, [0.0, 0.0, 0.75e-4, 0.75e-4, 0.05, 0.05], rtol=1e-12, atol=0)


class TestAmplitudes:
    """Test suite for the amplitudes"""

    def test_velocity_cancellation(self, wave_set):
        """Σ a²k₁⊗k₁ reproduces (ρ+γ)Id − R_ℓ pointwise."""
        amps = amplitudes(stress(2, grid=(8, 8, 8)), 0.2, ELL, wave_set)
        assert amps.velcancel_residual < 1e-8
        assert amps.admissibility <= wave_set.eps_u / 2 * (1 + 1e-12)
        assert len(amps.a) == len(wave_set)

    def test_zero_stress_constant(self, wave_set):
        """R_ℓ = 0 gives constant amplitudes."""
        amps = amplitudes(SpectralField.zeros(GRID, 9), 0.3, ELL, wave_set)
        for a in amps.a:
            assert a.mean()[0] > 0
            assert np.abs(project_nonzero(a).coeffs).max() < 1e-14

    def test_negative_gamma(self, wave_set):
        """γ_q < 0 means the energy profile left its band."""
        with pytest.raises(EnergyBandError):
            amplitudes(SpectralField.zeros(GRID, 9), -0.1, ELL, wave_set)


class TestPerturbations:
    """Test suite for w_p, w_c, w_t"""

    @pytest.fixture(scope="class")
    def constant_amps(self, wave_set):
        return amplitudes(SpectralField.zeros(GRID, 9), 0.3, ELL, wave_set)

    def test_zero_amplitudes(self, step):
        """a ≡ 0 gives w ≡ 0."""
        zero = AmplitudeSlice(t=0.0, a=[SpectralField.zeros(GRID, 1)] * 6, R_ell=SpectralField.zeros(GRID, 9),
                              gamma=0.0, rho=np.zeros(GRID))
        pert = perturbations(zero, step.jets, 1.0, 0.0021)
        for f in (pert.w_p, pert.w_c, pert.w_t, pert.total):
            assert f.max_abs() == 0.0

    def test_divergence_free(self, step, constant_amps):
        pert = perturbations(constant_amps, step.jets, 1.0, 0.0021)
        assert pert.w_p.max_abs() > 0
        assert (pert.w_p + pert.w_c).divergence_defect() < 1e-10
        assert pert.total.divergence_defect() < 1e-10
        assert pert.w_t.is_mean_free()

    def test_curl_identity(self, step, wave_set):
        """w_p + w_c from the direct formula equals curl(Σ a W^c)."""
        amps = amplitudes(stress(4), 0.3, ELL, wave_set)
        pert = perturbations(amps, step.jets, 0.7, 0.0017)
        assert pert.identity_residual < 1e-8

    def test_constant_amplitude_corrector(self, step, constant_amps):
        """Constant a: w_c = Σ a W̃^c."""
        t = 0.0021
        pert = perturbations(constant_amps, step.jets, 1.0, t)
        expected = SpectralField.zeros(GRID, 3)
        for k, a in enumerate(constant_amps.a):
            expected = expected + step.jets.correctors(k, t)[1] * a.mean()[0]
        assert (pert.w_c - expected).max_abs() < 1e-10 * max(1.0, expected.max_abs())


class TestStepJets:
    """Test suite for the jets of one step"""

    def test_unit_norm(self, step):
        for k in range(len(step.jets)):
            assert norm(step.jets.jet(k, 0.001), 'Hs') == pytest.approx(1.0)

    def test_time_sampling(self, step, profiles, wave_set):
        """A time step that undersamples the jet phases is rejected."""
        with pytest.raises(TimeSamplingError):
            StepJets(step.params, profiles, GRID, wave_set, dt=1.0)

    def test_empty_lattice(self, step, profiles, wave_set):
        """An 8³ grid holds no jet mode."""
        with pytest.raises(ResolutionError):
            StepJets(step.params, profiles, (8, 8, 8), wave_set, dt=2.5e-5)


class TestStep:
    """Test suite for ConvexIntegrationStep"""

    def test_unperturbed_before_cutoff(self, state, step, result):
        """u_{q+1} = u_q bit for bit where χ vanishes."""
        for i, t in enumerate(TIMES):
            if t <= step.chi.start:
                assert np.array_equal(result.u_next.slice(i).coeffs, state.u.slice(i).coeffs)
        assert result.per_time['active'].any()
        assert not result.per_time.loc[result.per_time['t'] <= step.chi.start, 'active'].any()

    def test_divergence_free(self, result):
        assert result.per_time['divergence'].max() < 1e-10

    def test_relaxed_system_closes(self, result):
        """The residual of (u_{q+1}, R_{q+1}) sits at the discretization floor."""
        assert result.scale > 0
        assert result.residual_ok()
        assert result.residual <= 10 * result.floor

    def test_components_symmetric_traceless(self, result):
        for name in COMPONENTS:
            for f in result.stored[name].fields():
                assert f.is_symmetric_traceless(1e-10), name

    def test_oscillation_split(self, result):
        """R_osc.1 holds its closed form only; the leftover defect is stored as R_osc.rem."""
        per_time = result.per_time
        checked = 0
        for k, t in enumerate(result.stored['osc1'].times):
            row = per_time.iloc[int(np.argmin(np.abs(per_time['t'].to_numpy() - t)))]
            osc1 = result.stored['osc1'].slice(k)
            assert norm(osc1, 'Hs', s=0.0) == pytest.approx(row['osc1_formula'], rel=1e-10, abs=1e-300)
            if row['osc_remainder'] == 0:
                assert result.stored['osc_rem'].slice(k).max_abs() == 0.0
            checked += bool(row['active'])
        assert checked > 0

    def test_commutator_vanishes(self, result):
        """Without noise R_com is zero."""
        assert np.all(result.stored['com'].coeffs == 0)

    def test_cut_component(self, state, step, result):
        """R_{q+1} = R_cut = R_q before the cut-off, R_cut = 0 once χ ≡ 1."""
        stored = result.stored
        for k, t in enumerate(stored['cut'].times):
            if t <= step.chi.start:
                assert np.array_equal(stored['cut'].slice(k).coeffs, state.R.slice(0).coeffs)
                assert np.array_equal(stored['R_next'].slice(k).coeffs, state.R.slice(0).coeffs)
            elif t >= step.level.T_next:
                assert stored['cut'].slice(k).max_abs() == 0.0

    def test_cancellation_diagnostics(self, result):
        active = result.per_time[result.per_time['active']]
        assert active['velcancel'].max() < 1e-8
        assert active['identity_residual'].max() < 1e-8
        assert np.all(active['gamma'] >= 0)

    def test_stats(self, result):
        assert result.stats['active_slices'] == int(result.per_time['active'].sum())
        assert result.stats['truncated_jets']

    def test_norm_table(self, step, result):
        """One row per (time, component); only R_cut is nonzero before the cut-off."""
        norms = result.norms
        assert len(norms) == len(TIMES) * len(COMPONENTS)
        early = norms[norms['t'] <= step.chi.start]
        assert (early.loc[early['component'] != 'cut', 'Lp'] == 0).all()
        assert set(result.component_norms()) == set(COMPONENTS)
        assert result.p == pytest.approx(lebesgue_exponent(step.eps))

    def test_causality(self, state, wave_set, profiles):
        """Changing R_q after t* leaves every output at t ≤ t* bit-identical."""
        base = FieldSeries(TIMES, np.repeat(state.R.coeffs, len(TIMES), axis=0))
        changed = base.coeffs.copy()
        changed[80:] *= 1.5
        outputs = []
        for series in (base, FieldSeries(TIMES, changed)):
            probe = IterationState(q=0, u=state.u, R=series, level=state.level, nu=NU)
            run = ConvexIntegrationStep(probe, 8.0, wave_set=wave_set, profiles=profiles)
            outputs.append(run.reynolds_slice(70)[0])
        for name in COMPONENTS:
            assert np.array_equal(outputs[0][name].coeffs, outputs[1][name].coeffs), name


class TestEnergyGap:
    """Test suite for energy_gap_report"""

    def test_regimes(self, step, result):
        table = energy_gap_report(result, step.energy_profile)
        assert set(table['regime']) == {'J1', 'J2', 'J3', 'unperturbed'}
        early = table[table['regime'] == 'unperturbed']
        assert np.array_equal(early['gap'].to_numpy(), early['inherited_gap'].to_numpy())
        assert early['within_band'].all()

    def test_batch_size(self, step, result):
        with pytest.raises(PreconditionError):
            energy_gap_report([result], step.energy_profile, n_mc=2)


class TestResidual:
    """Test suite for the relaxed-system residual"""

    def test_zero_fields(self):
        zero = FieldSeries.zeros(TIMES[:10], GRID, 3)
        assert residual(zero, FieldSeries.zeros(TIMES[:10], GRID, 9), None, NU) == 0.0

    def test_heat_solution(self, mode):
        """A decaying shear mode with R = u⊗̊u closes the system."""
        grid = (8, 8, 8)
        times = np.linspace(0.0, 0.1, 41)
        shape = mode(grid, (1, 0, 0), amplitude=0.5, component=1, n_components=3)
        decay = np.exp(-NU * (2 * np.pi) ** 2 * times)
        fields = [shape * d for d in decay]
        u = FieldSeries.from_fields(times, fields)
        R = FieldSeries.from_fields(times, [traceless_outer(f, f) for f in fields])
        assert residual(u, R, None, NU) < 1e-6

    def test_toy_state(self, state):
        assert state.relaxed_residual() < 1e-12

    def test_misaligned(self, state):
        with pytest.raises(AlignmentError):
            residual(state.u, FieldSeries.constant(TIMES + 1.0, state.R.slice(0)), None, NU)

    def test_toy_needs_divergence_free(self, mode, level):
        scalar = mode(GRID, (1, 0, 0))
        with pytest.raises(PreconditionError):
            steady_toy_state(gradient(scalar), NU, TIMES, level)


class TestReports:
    """Test suite for the exponent reports"""

    LAMBDAS = [8.0, 16.0, 32.0, 64.0]
    EPS = 0.01

    def test_component_fit(self):
        measured = [{'lin': lam ** (-1 / 7 + self.EPS), 'osc1': 2 * lam ** (-1 / 7 + self.EPS),
                     'osc2': lam ** (-9 / 7 + self.EPS), 'osc3': 0.5, 'osc_rem': 0.1, 'cor': lam ** (-1 / 7),
                     'com': 0.0, 'cut': 0.2} for lam in self.LAMBDAS]
        report = component_norm_report(measured, lebesgue_exponent(self.EPS), self.LAMBDAS, eps=self.EPS)
        table = report['table'].set_index('component')
        for name in ('lin', 'osc1', 'osc2', 'cor'):
            assert table.loc[name, 'residual'] < 1e-10
            assert table.loc[name, 'negative']
        assert table.loc['com', 'fitted_exponent'] == -np.inf
        assert table.loc['cut', 'fitted_exponent'] == pytest.approx(0.0, abs=1e-12)
        assert len(report['rows']) == len(COMPONENTS)

    def test_too_few_lambdas(self):
        measured = [{name: 1.0 for name in COMPONENTS}] * 3
        with pytest.raises(RegressionError):
            component_norm_report(measured, 1.0, self.LAMBDAS[:3])

    def test_perturbation_fit(self):
        predicted = predicted_perturbation_exponents(1.0)
        measured = [{name: lam ** predicted[name] for name in predicted} for lam in self.LAMBDAS]
        table = perturbation_norm_report(measured, 1.0, self.LAMBDAS)['table']
        assert (table['residual'] < 1e-10).all()

    def test_predicted_perturbation_exponents(self):
        assert predicted_perturbation_exponents(2.0)['w_p'] == pytest.approx(0.0)
        assert predicted_perturbation_exponents(2.0)['w_c'] == pytest.approx(-2 / 7)
        assert predicted_perturbation_exponents(1.0)['w_t'] == pytest.approx(-9 / 7)
        assert lebesgue_exponent(0.0) == 1.0
