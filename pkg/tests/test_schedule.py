"""
Tests for the backward schedule.

Validates:
- amplitude sequences and the initial amplitudes
- backward time selection against closed-form thresholds
- desk, paper and regular-data parameter regimes
- energy profiles and their band sweep
"""

import numpy as np
import pandas as pd
import pytest

from lambda_ci.exceptions import (
    ConstraintError,
    InfeasibleDepthError,
    OrderingError,
    PreconditionError,
    RepresentabilityError,
)
from lambda_ci.schedule import (
    ScheduleSpec,
    backward_time_checks,
    build_energy_profile,
    decay_function,
    delta_sequence,
    desk_scale_params,
    h3_params,
    initial_amplitudes,
    paper_params,
    select_backward_times,
    validate_profile,
)

C_STAR = 1e-3


def sqrt_decay(t):
    return np.sqrt(t)


@pytest.fixture
def desk_spec():
    return desk_scale_params([8.0, 16.0, 32.0])


@pytest.fixture
def flat_base():
    return lambda t: 2.0 + 0.0 * np.asarray(t, dtype=float)


class TestAmplitudes:
    """Test suite for δ_q"""

    def test_geometric_tail(self):
        """δ_{q+1}/δ_q = 10⁻³ for q ≥ 3."""
        deltas = delta_sequence(4, initial=(5.0, 0.8, 0.1))
        assert deltas[:3].tolist() == [5.0, 0.8, 0.1]
        assert np.allclose(deltas[4:] / deltas[3:-1], 1e-3, rtol=1e-12)
        assert len(deltas) == 8

    def test_initial_amplitudes(self):
        """δ₂ certifies ‖R₀‖ ≤ ⅛c_*δ₂; δ₁ dominates 8δ₂ and the gap."""
        d0, d1, d2 = initial_amplitudes(R0_norm=0.01, c_star=0.1, gap_sup=3.0, v0_energy=0.5)
        assert d2 == pytest.approx(0.8)
        assert 0.01 <= 0.1 * d2 / 8 * (1 + 1e-12)
        assert d1 == pytest.approx(6.4)
        assert d0 == 1.0

    def test_vanishing_stress_keeps_band_open(self):
        """R₀ = 0 still leaves ¾δ₃ < δ₂."""
        _, _, d2 = initial_amplitudes(R0_norm=0.0, c_star=0.1)
        assert 0.75 * 1e-9 < d2


class TestBackwardTimes:
    """Test suite for select_backward_times"""

    @pytest.fixture
    def times(self):
        return select_backward_times(sqrt_decay, C_STAR, delta_sequence(4), T=2.0)

    def test_shapes(self, times):
        """Depth 4 gives T_0..T_4, ℓ'_0..ℓ'_3 and T'_1..T'_5."""
        assert len(times.T_seq) == 5
        assert len(times.ell_prime_seq) == 4
        assert len(times.T_prime_seq) == 5
        assert times.T_seq[0] == 2.0

    def test_thresholds_closed_form(self, times):
        """For ‖R₀‖ = √T*, T'_q sits at the inverted threshold (⅛c_*δ_{q+2})²."""
        deltas = delta_sequence(4)
        for q in range(1, 6):
            expected = (C_STAR * deltas[q + 2] / 8) ** 2
            assert times.T_prime_seq[q - 1] == pytest.approx(expected, rel=1e-6)
            assert times.T_prime_seq[q - 1] <= expected

    def test_every_inequality(self, times):
        """The post hoc check passes every row for q ≤ 4."""
        table = backward_time_checks(times, sqrt_decay, C_STAR, delta_sequence(4))
        assert table['ok'].all(), table[~table['ok']]
        assert set(table['constraint']) >= {'halving', 'stress_threshold', 'ell_prime_gap', 'ell_prime_spacing'}

    def test_halving(self, times):
        """T'_{q+1} < T'_q/2 for every produced pair."""
        tp = times.T_prime_seq
        assert np.all(tp[1:] < tp[:-1] / 2)

    def test_constant_table_infeasible(self):
        """A decay table stuck above the first threshold fails at q=1."""
        table = pd.DataFrame({'T_star': 2.0 ** -np.arange(3, 9), 'R0_L1': 0.5})
        with pytest.raises(InfeasibleDepthError, match="q=1") as err:
            select_backward_times(table, C_STAR, delta_sequence(2), T=2.0)
        assert err.value.deepest_level == 0

    def test_table_power_law(self):
        """A power-law table is extrapolated below its range."""
        t = 2.0 ** -np.arange(3, 9)
        table = pd.DataFrame({'T_star': t, 'R0_L1': np.sqrt(t)})
        decay = decay_function(table)
        assert decay(2.0 ** -20) == pytest.approx(2.0 ** -10, rel=1e-9)
        assert decay(1.0) == np.inf
        times = select_backward_times(table, C_STAR, delta_sequence(2), T=0.1)
        assert backward_time_checks(times, table, C_STAR, delta_sequence(2))['ok'].all()

    def test_short_delta_sequence(self):
        """The amplitudes must reach δ_{depth+3}."""
        with pytest.raises(PreconditionError):
            select_backward_times(sqrt_decay, C_STAR, delta_sequence(2), T=2.0, depth=3)


class TestDeskParams:
    """Test suite for desk_scale_params"""

    def test_three_levels(self, desk_spec):
        """λ ∈ {8, 16, 32} gives a valid three-level spec."""
        assert desk_spec.depth == 3
        assert np.allclose(desk_spec.lambda_seq, [8, 16, 32])
        assert np.allclose(desk_spec.ell_seq, [8.0 ** -2, 16.0 ** -2, 32.0 ** -2])
        checks = desk_spec.validate()
        assert checks[~checks['relaxed']]['ok'].all()

    def test_relaxed_constraints_noted(self, desk_spec):
        """Every relaxed inequality that fails carries a provenance note."""
        checks = desk_spec.checks()
        failing = set(checks[~checks['ok']]['constraint'])
        assert failing
        assert failing <= set(checks[checks['relaxed']]['constraint'])
        noted = {note.split(':')[0] for note in desk_spec.notes}
        assert failing <= noted

    def test_nonmonotone(self):
        """A nonmonotone list is an ordering error."""
        with pytest.raises(OrderingError):
            desk_scale_params([8.0, 32.0, 16.0])

    def test_validate_idempotent(self, desk_spec):
        """validate() has no side effects."""
        first = desk_spec.validate()
        second = desk_spec.validate()
        pd.testing.assert_frame_equal(first, second)

    def test_slice(self, desk_spec):
        """A level slice carries T_q, T_{q+1}, T_{q+2}, λ_{q+1} and ℓ_q."""
        level = desk_spec.slice(1)
        assert (level.T_q, level.T_next, level.T_after_next) == (1.0, 0.5, 0.25)
        assert level.lambda_next == pytest.approx(32.0)
        assert level.ell == pytest.approx(16.0 ** -2)
        with pytest.raises(PreconditionError):
            desk_spec.slice(2)

    def test_json_round_trip(self, desk_spec, tmp_path):
        """A spec survives JSON unchanged."""
        path = tmp_path / "spec.json"
        assert desk_spec.to_json(path)
        assert ScheduleSpec.from_json(path) == desk_spec


class TestPaperParams:
    """Test suite for the paper-faithful regime"""

    def test_single_level_representable(self):
        """One level is representable and satisfies every inequality."""
        spec = paper_params(a=2, b=1_400_000, eps=1e-4, depth=1)
        lam = spec.lambda_seq[0]
        assert round(lam ** (1 / 7)) ** 7 == pytest.approx(lam)
        assert 1 / lam <= spec.delta_seq[3]
        assert spec.checks()['ok'].all()

    def test_overflow_rejected(self):
        """λ₁ = λ₀^b leaves float64 and the error says so."""
        with pytest.raises(RepresentabilityError, match="λ_1 overflows"):
            paper_params(a=2, b=1_400_000, eps=1e-4, depth=2)

    def test_parameter_gates(self):
        """ε < 10⁻³ and b ∈ 14N with b > 100/ε are required."""
        with pytest.raises(ConstraintError):
            paper_params(a=2, b=1_400_000, eps=1e-2, depth=1)
        with pytest.raises(ConstraintError):
            paper_params(a=2, b=1_400_001, eps=1e-4, depth=1)


class TestH3Params:
    """Test suite for the regular-data regime"""

    @pytest.fixture
    def spec(self):
        return h3_params(a=1e40, b=2_000_000, beta=1e-28, c_star=C_STAR, depth=1, eps=1e-2)

    def test_explicit_times(self, spec):
        """T_q = ½(⅛c_*δ_{q+2})^{10/3} for q ≥ 1."""
        for q in (1, 2):
            expected = 0.5 * (C_STAR * spec.delta_seq[q + 2] / 8) ** (10 / 3)
            assert spec.T_seq[q] == pytest.approx(expected, rel=1e-12)

    def test_log_storage(self, spec):
        """λ_q = a^{b^q} is held as a logarithm."""
        assert spec.log_lambda_seq[0] == pytest.approx(np.log(1e40))
        assert spec.log_ell_seq[0] == pytest.approx(-30 * np.log(1e40))

    def test_beta_gate(self):
        """β ≥ 3/(1000b⁴) is rejected."""
        with pytest.raises(ConstraintError):
            h3_params(a=1e40, b=2_000_000, beta=1e-20, c_star=C_STAR, depth=1, eps=1e-2)


class TestEnergyProfile:
    """Test suite for build_energy_profile"""

    def test_sweep_passes(self, desk_spec, flat_base):
        """The band validator passes a 10⁴-point sweep."""
        profile = build_energy_profile(flat_base, desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq)
        report = validate_profile(profile, n_points=10_000)
        assert len(report) == 3
        assert report['ok'].all()
        assert np.all(report['min_gap'] >= report['lower'])
        assert np.all(report['max_gap'] <= report['upper'])

    def test_anchored_at_zero(self, desk_spec, flat_base):
        """e(0) = base(0) exactly."""
        profile = build_energy_profile(flat_base, desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq)
        assert profile(0.0) == 2.0

    def test_smooth(self, desk_spec, flat_base):
        """The gap is C² across every knot."""
        profile = build_energy_profile(flat_base, desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq)
        for order in (0, 1, 2):
            d = profile.gap.derivative(order) if order else profile.gap
            for t in profile.knots['t'].to_numpy()[1:-1]:
                left, right = d(t - 1e-12), d(t + 1e-12)
                assert abs(left - right) <= 1e-6 * (1 + abs(left))

    def test_family_separation(self, desk_spec, flat_base):
        """Two family parameters differ by at least ¼δ_{q+2} on every band."""
        args = (desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq)
        e0 = build_energy_profile(flat_base, *args, family=0.0)
        e1 = build_energy_profile(flat_base, *args, family=1.0)
        for _, band in e0.band_targets.iterrows():
            t = np.linspace(band['t_lo'], band['t_hi'], 10_001)
            q = int(band['q'])
            assert np.max(np.abs(e1(t) - e0(t))) >= 0.25 * desk_spec.delta_seq[q + 2]

    def test_band_violation(self, desk_spec, flat_base):
        """A family parameter pushing past the band raises with the offending time."""
        with pytest.raises(ConstraintError) as err:
            build_energy_profile(flat_base, desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq, family=3.0)
        assert err.value.t is not None and 0 < err.value.t <= 2.0

    def test_tabulated_base(self, desk_spec):
        """A (t, energy) table is splined into the base curve."""
        t = np.linspace(0, 2.0, 41)
        base = pd.DataFrame({'t': t, 'energy': 1.0 + np.exp(-t)})
        profile = build_energy_profile(base, desk_spec.delta_seq, desk_spec.T_seq, desk_spec.ell_seq)
        assert profile(0.0) == pytest.approx(2.0, rel=1e-12)
        assert profile(1.5) - (1.0 + np.exp(-1.5)) > 0
