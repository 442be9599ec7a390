#!/usr/bin/env python3
"""
One backward convex-integration iteration q → q+1.

Starting from a relaxed solution (u_q, R_q, z_q) on a uniform time grid the step builds the
cut-off χ, the mollified stress R_ℓ, the amplitudes a_(k), the principal part w_p, the
incompressibility corrector w_c and the temporal corrector w_t, the new velocity
u_{q+1} = u_q + χ(w_p + w_c) + χ²w_t and the stress R_{q+1} split into its linear,
oscillation, corrector, commutator and cut-off parts.

Every object at time t is built from inputs at times ≤ t: the temporal mollifier and the
amplitude time derivatives look backwards only. Pressures are never formed; residuals are
measured after Leray projection.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import ToolkitConfig
from .exceptions import (
    AdmissibilityError,
    AlignmentError,
    EnergyBandError,
    HistoryError,
    OrderingError,
    PreconditionError,
    RegressionError,
    ResolutionError,
    ShapeMismatchError,
    TimeSamplingError,
)
from .geometry import WaveVectorSet, admissible_c_star, build_wavevector_set, gamma, reconstruct
from .jets import MU_EXP, R_PAR_EXP, R_PERP_EXP, JetFamily, JetParams, JetProfiles, bump, build_profiles
from .lambda_nse import taylor_green
from .schedule import EnergyProfile, LevelSlice, build_energy_profile
from .spectral_field import (
    TENSOR,
    VECTOR,
    FieldSeries,
    SpectralField,
    curl,
    divergence,
    from_physical,
    gradient,
    inverse_divergence,
    laplacian,
    leray_project,
    mollify_space,
    norm,
    outer_product,
    project_nonzero,
    smooth_step,
    to_physical,
    traceless_outer,
)
from .utils import calculate_processing_time, loglog_fit, run_parallel

logger = logging.getLogger(__name__)

STEP_DEFAULTS = ToolkitConfig.STEP
TOLERANCES = ToolkitConfig.TOLERANCES
OVERSAMPLE = ToolkitConfig.GRID['dealias_factor']

COMPONENTS = ('lin', 'osc1', 'osc2', 'osc3', 'osc_rem', 'cor', 'com', 'cut')
PERTURBATIONS = ('w_p', 'w_c', 'w_t')

# 4th-order first-derivative stencils, weights in units of 1/(12 dt)
_CENTRAL = ((-2, -1, 1, 2), (1.0, -8.0, 8.0, -1.0))
_FORWARD = ((0, 1, 2, 3, 4), (-25.0, 48.0, -36.0, 16.0, -3.0))
_FORWARD_SHIFTED = ((-1, 0, 1, 2, 3), (-3.0, -10.0, 18.0, -6.0, 1.0))
_BACKWARD = ((0, -1, -2, -3, -4), (25.0, -48.0, 36.0, -16.0, 3.0))
_BACKWARD_SHIFTED = ((1, 0, -1, -2, -3), (3.0, 10.0, -18.0, 6.0, -1.0))


def lebesgue_exponent(eps: float) -> float:
    """p = 16/(16 − 7ε), the integrability the stress estimates are made in"""
    return 16.0 / (16.0 - 7.0 * eps)


def predicted_component_exponents(eps: float) -> Dict[str, float]:
    """λ-exponents of the stress components under the standard parameter tuple"""
    return {'lin': -1.0 / 7.0 + eps, 'osc1': -1.0 / 7.0 + eps, 'osc2': -MU_EXP + eps, 'osc3': math.nan,
            'osc_rem': math.nan, 'cor': -1.0 / 7.0, 'com': math.nan, 'cut': math.nan}


def predicted_perturbation_exponents(rho: float) -> Dict[str, float]:
    """λ-exponents of ‖w_p‖, ‖w_c‖, ‖w_t‖ in L^ρ"""
    concentration = R_PAR_EXP + 2.0 * R_PERP_EXP
    return {
        'w_p': (1.0 / rho - 0.5) * concentration,
        'w_c': (R_PERP_EXP - R_PAR_EXP) + (1.0 / rho - 0.5) * concentration,
        'w_t': -MU_EXP + (1.0 / rho - 1.0) * concentration,
    }


# ----------------------------------------------------------------------------------------------
# Time grid helpers

def uniform_step(times: Sequence[float]) -> float:
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise AlignmentError("a time grid needs at least two points")
    steps = np.diff(times)
    dt = float(steps.mean())
    if dt <= 0 or np.abs(steps - dt).max() > 1e-9 * dt:
        raise AlignmentError("series must sit on a uniform, increasing time grid")
    return dt


def derivative_stencil(index: int, n: int, causal: bool = False) -> Tuple[Tuple[int, ...], np.ndarray]:
    """
    Offsets and weights (already divided by 12) of a 4th-order first derivative at index.

    causal=True always uses the backward stencil and needs four past slices.
    """
    if n < 5:
        raise PreconditionError(f"4th-order time derivatives need at least 5 slices, got {n}")
    if causal:
        if index < 4:
            raise HistoryError(f"backward derivative at slice {index} needs four past slices")
        offsets, weights = _BACKWARD
    elif index == 0:
        offsets, weights = _FORWARD
    elif index == 1:
        offsets, weights = _FORWARD_SHIFTED
    elif index == n - 2:
        offsets, weights = _BACKWARD_SHIFTED
    elif index == n - 1:
        offsets, weights = _BACKWARD
    else:
        offsets, weights = _CENTRAL
    return offsets, np.asarray(weights) / 12.0


def time_kernel(ell: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Taps j ≥ 1 with j·dt < ℓ and unit-mass bump weights of the one-sided kernel on (0, ℓ)"""
    if ell <= 0 or dt <= 0:
        raise PreconditionError(f"ℓ and dt must be positive, got ℓ={ell}, dt={dt}")
    if ell / dt < 2.0 - 1e-9:
        raise PreconditionError(f"time grid must be finer than ℓ: dt={dt:.3e} > ℓ/2={ell / 2:.3e}")
    offsets = np.arange(1, int(math.ceil(ell / dt - 1e-9)))
    weights = bump(2.0 * offsets * dt / ell - 1.0)
    return offsets, weights / weights.sum()


# ----------------------------------------------------------------------------------------------
# Cut-off

def _smooth_step_derivative(x, order: int) -> np.ndarray:
    """First or second derivative of smooth_step, in closed form"""
    x = np.asarray(x, dtype=float)
    inside = (x > 1e-3) & (x < 1.0 - 1e-3)
    xs = np.where(inside, x, 0.5)
    A, B = np.exp(-1.0 / xs), np.exp(-1.0 / (1.0 - xs))
    a1, b1 = 1.0 / xs ** 2, 1.0 / (1.0 - xs) ** 2
    g = a1 + b1
    if order == 1:
        value = A * B * g / (A + B) ** 2
    elif order == 2:
        g1 = -2.0 / xs ** 3 + 2.0 / (1.0 - xs) ** 3
        value = A * B * ((g * (a1 - b1) + g1) * (A + B) - 2.0 * g * (A * a1 - B * b1)) / (A + B) ** 3
    else:
        raise PreconditionError(f"cut-off derivatives of order {order} are not available")
    return np.where(inside, value, 0.0)


@dataclass(frozen=True)
class CutoffChi:
    """χ_{q+1}: 0 up to (T_{q+2}+T_{q+1})/2, 1 from T_{q+1} on, an exp-smoothstep between"""

    T_next: float
    T_after_next: float

    def __post_init__(self):
        if not 0 < self.T_after_next < self.T_next:
            raise OrderingError(f"cut-off needs 0 < T_(q+2) < T_(q+1), got {self.T_after_next}, {self.T_next}")

    @property
    def start(self) -> float:
        return 0.5 * (self.T_after_next + self.T_next)

    @property
    def width(self) -> float:
        return self.T_next - self.start

    def __call__(self, t):
        value = smooth_step((np.asarray(t, dtype=float) - self.start) / self.width)
        return float(value) if np.ndim(value) == 0 else value

    def derivative(self, t, order: int = 1):
        x = (np.asarray(t, dtype=float) - self.start) / self.width
        value = _smooth_step_derivative(x, order) / self.width ** order
        return float(value) if np.ndim(value) == 0 else value

    def bounds(self, ell: float, n_points: int = 20_001) -> pd.DataFrame:
        """sup|∂_t^N χ| for N ≤ 2 against ℓ^{-N}; 'constant' is the measured C in C·ℓ^{-N}"""
        t = np.linspace(self.T_after_next, self.T_next, n_points)
        rows = []
        for order in (0, 1, 2):
            values = self(t) if order == 0 else self.derivative(t, order)
            sup = float(np.max(np.abs(values)))
            rows.append({'N': order, 'sup': sup, 'scale': ell ** -order, 'constant': sup * ell ** order})
        return pd.DataFrame(rows)


# ----------------------------------------------------------------------------------------------
# Mollification

class _TimeMollifier:
    """R_ℓ(t_i) = Σ_j w_j (φ_ℓ *_x R_q)(t_{i−j}) over taps strictly in the past"""

    def __init__(self, R: FieldSeries, ell: float, history: str = 'error'):
        if history not in ('error', 'constant'):
            raise PreconditionError(f"history must be 'error' or 'constant', got '{history}'")
        if R.n_components != TENSOR:
            raise ShapeMismatchError("the mollified stress must be a tensor series")
        self.R = R
        self.ell = ell
        self.history = history
        self.times = R.times
        self._space: Dict[int, SpectralField] = {}
        if not R.is_constant:
            self.offsets, self.weights = time_kernel(ell, uniform_step(R.times))

    def first_complete(self) -> int:
        """First slice whose kernel support lies inside the stored history"""
        return 0 if self.R.is_constant else int(self.offsets[-1])

    def _spatial(self, index: int) -> SpectralField:
        key = 0 if self.R.is_constant else index
        if key not in self._space:
            self._space[key] = mollify_space(self.R.slice(key), self.ell)
        return self._space[key]

    def at(self, index: int) -> SpectralField:
        if self.R.is_constant:
            return self._spatial(0)
        if index < self.first_complete() and self.history == 'error':
            t = self.times[index]
            raise HistoryError(
                f"R_ℓ at t={t:.6g} needs R_q back to t−ℓ={t - self.ell:.6g}, "
                f"before the first stored time {self.times[0]:.6g}"
            )
        coeffs = sum(w * self._spatial(max(index - int(j), 0)).coeffs for j, w in zip(self.offsets, self.weights))
        return SpectralField(coeffs)

    def evict_before(self, index: int):
        for key in [k for k in self._space if k < index - self.first_complete()]:
            del self._space[key]


def mollify_stress(R_q: FieldSeries, ell: float, history: str = 'error',
                   from_time: Optional[float] = None) -> FieldSeries:
    """
    Space mollification of every slice followed by the one-sided time convolution.

    Without from_time the output starts at the first time whose kernel support is covered by
    the stored history. An earlier from_time raises HistoryError unless history='constant',
    which freezes R_q at its first slice for t < 0.
    """
    mollifier = _TimeMollifier(R_q, ell, history)
    if R_q.is_constant:
        return FieldSeries.constant(R_q.times, mollifier.at(0))
    if from_time is None:
        start = mollifier.first_complete()
    else:
        start = int(np.searchsorted(R_q.times, from_time - 1e-12 * max(1.0, abs(from_time))))
    slices = [mollifier.at(i) for i in range(start, len(R_q))]
    return FieldSeries.from_fields(R_q.times[start:], slices)


# ----------------------------------------------------------------------------------------------
# Iteration state

def mean_energy(u: FieldSeries, z_batch: Sequence[FieldSeries]) -> np.ndarray:
    """E‖u + z‖²_{L²} per time, a Monte-Carlo mean over the batch"""
    if not z_batch:
        z_batch = [FieldSeries.zeros(u.times, u.grid_dims, VECTOR)]
    total = np.zeros(len(u))
    for z in z_batch:
        if u.is_constant and z.is_constant:
            total += float(np.sum(np.abs(u.coeffs[0] + z.coeffs[0]) ** 2))
        else:
            total += np.array([float(np.sum(np.abs(u.slice(i).coeffs + z.slice(i).coeffs) ** 2))
                               for i in range(len(u))])
    return total / len(z_batch)


@dataclass
class IterationState:
    """(u_q, R_q, z_q) on a uniform grid starting at t = 0, with the level-q parameters"""

    q: int
    u: FieldSeries
    R: FieldSeries
    level: LevelSlice
    nu: float
    z: Optional[FieldSeries] = None
    z_batch: Tuple[FieldSeries, ...] = ()
    dt: float = field(init=False)

    def __post_init__(self):
        if self.u.n_components != VECTOR or self.R.n_components != TENSOR:
            raise ShapeMismatchError("state needs a vector velocity and a tensor stress series")
        if self.z is None:
            self.z = FieldSeries.zeros(self.u.times, self.u.grid_dims, VECTOR)
        self.z_batch = tuple(self.z_batch)
        for name, series in [('R', self.R), ('z', self.z)] + [('z_batch', z) for z in self.z_batch]:
            _check_aligned(self.u, series, name)
        self.dt = uniform_step(self.u.times)
        if self.u.times[0] != 0.0:
            raise PreconditionError(f"state must start at t = 0, starts at {self.u.times[0]}")
        if self.u.times[-1] < self.level.T_next:
            raise PreconditionError(f"state ends at {self.u.times[-1]} before T_(q+1) = {self.level.T_next}")

    @property
    def times(self) -> np.ndarray:
        return self.u.times

    @property
    def grid(self):
        return self.u.grid_dims

    def energies(self) -> np.ndarray:
        return mean_energy(self.u, self.z_batch or (self.z,))

    def relaxed_residual(self) -> float:
        return residual(self.u, self.R, self.z, self.nu)


def _check_aligned(reference: FieldSeries, series: FieldSeries, name: str):
    if series.grid_dims != reference.grid_dims:
        raise ShapeMismatchError(f"{name} lives on {series.grid_dims}, velocity on {reference.grid_dims}")
    if len(series) != len(reference) or np.abs(series.times - reference.times).max() > 1e-12 * max(1.0, reference.times[-1]):
        raise AlignmentError(f"{name} series is not aligned with the velocity times")


def _toy_stress(u: SpectralField, z: Optional[SpectralField], nu: float) -> SpectralField:
    v = u if z is None else u + z
    return inverse_divergence(leray_project(divergence(outer_product(v, v))) - laplacian(u) * nu)


def steady_toy_state(u: SpectralField, nu: float, times: Sequence[float], level: LevelSlice, q: int = 0,
                     z: Optional[FieldSeries] = None) -> IterationState:
    """
    Time-independent u_q with R_q = R(P_H div((u+z)⊗(u+z)) − νΔu), which closes the relaxed
    system exactly; with z = None the stress is constant in time too.
    """
    if u.n_components != VECTOR or not u.is_divergence_free():
        raise PreconditionError("toy states need a divergence-free vector field")
    times = np.asarray(times, dtype=float)
    velocity = FieldSeries.constant(times, u)
    if z is None:
        return IterationState(q=q, u=velocity, R=FieldSeries.constant(times, _toy_stress(u, None, nu)),
                              level=level, nu=nu)
    stress = FieldSeries.from_fields(times, [_toy_stress(u, z.slice(i), nu) for i in range(len(times))])
    return IterationState(q=q, u=velocity, R=stress, level=level, nu=nu, z=z)


def desk_level(lambda_next: float, wave_set: Optional[WaveVectorSet] = None) -> LevelSlice:
    s = STEP_DEFAULTS
    return LevelSlice(q=s['q'], T_q=s['T'], T_next=s['T_next'], T_after_next=s['T_after_next'],
                      delta_next=s['delta_next'], delta_after_next=s['delta_after_next'],
                      delta_third=s['delta_third'], lambda_next=float(lambda_next), ell=s['ell'],
                      c_star=admissible_c_star(wave_set or build_wavevector_set()))


def desk_toy_state(lambda_next: float = 8.0, grid: Optional[Sequence[int]] = None,
                   wave_set: Optional[WaveVectorSet] = None, nu: float = ToolkitConfig.SOLVER['nu']) -> IterationState:
    """Weak Taylor-Green toy state on the desk window"""
    grid = tuple(grid or STEP_DEFAULTS['grid'])
    times = np.linspace(0.0, STEP_DEFAULTS['T'], STEP_DEFAULTS['n_times'])
    u = taylor_green(grid) * STEP_DEFAULTS['toy_amplitude']
    return steady_toy_state(u, nu, times, desk_level(lambda_next, wave_set), q=STEP_DEFAULTS['q'])


# ----------------------------------------------------------------------------------------------
# Energy

def energy_offset(t, level: LevelSlice) -> np.ndarray:
    """f_q: ½δ_{q+2} from T_{q+1} on, ¾δ_{q+3} on [T_{q+2}+ℓ_q, T_{q+1}), 0 before"""
    t = np.asarray(t, dtype=float)
    late = t >= level.T_next
    middle = (t >= level.T_after_next + level.ell) & ~late
    return np.where(late, 0.5 * level.delta_after_next, np.where(middle, 0.75 * level.delta_third, 0.0))


def gamma_series(times: np.ndarray, profile: EnergyProfile, energies: np.ndarray, level: LevelSlice) -> np.ndarray:
    """γ_q = ⅓(e − f_q − E‖u_q+z_q‖²) mollified one-sidedly; values before t=0 are frozen at t=0"""
    raw = (np.asarray(profile(times)) - energy_offset(times, level) - energies) / 3.0
    offsets, weights = time_kernel(level.ell, uniform_step(times))
    index = np.maximum(np.arange(len(times))[:, None] - offsets[None, :], 0)
    return (raw[index] * weights[None, :]).sum(axis=1)


def step_energy_profile(state: IterationState, family: float = ToolkitConfig.SCHEDULE['family'],
                        n_points: int = ToolkitConfig.SCHEDULE['energy_check_points']) -> EnergyProfile:
    """Energy profile over the state's window with the bands of levels q and q+1"""
    level = state.level
    base = pd.DataFrame({'t': state.times, 'energy': state.energies()})
    deltas = [level.delta_next, level.delta_next, level.delta_after_next, level.delta_third]
    T_seq = [float(state.times[-1]), level.T_next, level.T_after_next]
    return build_energy_profile(base, deltas, T_seq, [level.ell, level.ell], family=family, n_points=n_points)


# ----------------------------------------------------------------------------------------------
# Amplitudes

@dataclass
class AmplitudeSlice:
    t: float
    a: List[SpectralField]
    R_ell: SpectralField
    gamma: float
    rho: np.ndarray
    velcancel_residual: float = 0.0
    admissibility: float = 0.0


def amplitudes(R_ell: SpectralField, gamma_q: float, ell: float, wave_set: WaveVectorSet,
               t: float = 0.0) -> AmplitudeSlice:
    """
    a_(k) = (ρ+γ_q)^{1/2} γ_(k)(Id − R_ℓ/(ρ+γ_q)) with ρ = 2ε_u⁻¹(ℓ² + |R_ℓ|²)^{1/2}, evaluated at
    the grid points. The residual of Σ a²_(k) k₁⊗k₁ = (ρ+γ_q)Id − R_ℓ is measured at the same points.
    """
    if gamma_q < 0:
        raise EnergyBandError(f"γ_q = {gamma_q:.3e} < 0 at t={t:.6g}: the energy profile leaves its band")
    grid = R_ell.grid_dims
    stress = np.moveaxis(to_physical(R_ell).reshape((3, 3) + grid), (0, 1), (-2, -1))
    size = np.sqrt((stress ** 2).sum(axis=(-2, -1)))
    rho = 2.0 / wave_set.eps_u * np.sqrt(ell ** 2 + size ** 2)
    total = rho + gamma_q

    ratio = size / total
    worst = np.unravel_index(int(np.argmax(ratio)), grid)
    if ratio[worst] > wave_set.eps_u:
        raise AdmissibilityError(
            f"|R_ℓ|/(ρ+γ) = {ratio[worst]:.4e} exceeds ε_u = {wave_set.eps_u:.4e} at grid point {worst}, t={t:.6g}"
        )

    S = np.eye(3) - stress / total[..., None, None]
    samples = np.sqrt(total)[..., None] * gamma(S, wave_set)

    target = total[..., None, None] * np.eye(3) - stress
    defect = reconstruct(samples ** 2, wave_set) - target
    velcancel = float(np.mean(np.sqrt((defect ** 2).sum(axis=(-2, -1)))))

    fields = [from_physical(samples[..., k]) for k in range(samples.shape[-1])]
    return AmplitudeSlice(t=float(t), a=fields, R_ell=R_ell, gamma=float(gamma_q), rho=rho,
                          velcancel_residual=velcancel, admissibility=float(ratio.max()))


# ----------------------------------------------------------------------------------------------
# Jets and perturbations

def _samples(f: SpectralField) -> np.ndarray:
    return to_physical(f, OVERSAMPLE)


def _along(scalar_samples: np.ndarray, direction: np.ndarray) -> np.ndarray:
    return np.asarray(direction, dtype=float)[:, None, None, None] * scalar_samples[None]


class StepJets:
    """Jets of generation q+1 on the step grid, each rescaled to unit L² norm"""

    def __init__(self, params: JetParams, profiles: JetProfiles, grid: Sequence[int], wave_set: WaveVectorSet,
                 dt: float, allow_truncation: bool = STEP_DEFAULTS['allow_truncation'],
                 sampling_limit: float = STEP_DEFAULTS['time_sampling_limit']):
        self.params = params
        self.family = JetFamily(params, profiles, grid, wave_set=wave_set, allow_truncation=allow_truncation)
        self.grid = self.family.grid
        self.k1 = [frame.k1 for frame in wave_set.entries]

        self.scales = []
        for k in range(len(self.family)):
            size = norm(self.family.jet(k, 0.0), 'Hs', s=0.0)
            if size == 0.0:
                raise ResolutionError(f"grid {self.grid} holds no mode of jet {k} at λ={params.lam:g}")
            self.scales.append(1.0 / size)

        # phases advance by 2π·n·sμ·dt per step
        self.sampling = dt * params.time_frequency * self.family.max_parallel_mode()
        if self.sampling > sampling_limit:
            raise TimeSamplingError(
                f"dt·sμ·n_max = {self.sampling:.3f} exceeds {sampling_limit}: refine the time grid for λ={params.lam:g}"
            )

    def __len__(self) -> int:
        return len(self.family)

    def jet(self, k: int, t: float, time_derivative: int = 0) -> SpectralField:
        return self.family.jet(k, t, time_derivative) * self.scales[k]

    def correctors(self, k: int, t: float, time_derivative: int = 0) -> Tuple[SpectralField, SpectralField]:
        w_c, w_tilde = self.family.correctors(k, t, time_derivative)
        return w_c * self.scales[k], w_tilde * self.scales[k]


@dataclass
class PerturbationSlice:
    t: float
    chi: float
    w_p: SpectralField
    w_c: SpectralField
    w_t: SpectralField
    w_pc: SpectralField
    total: SpectralField
    identity_residual: float
    high_mass: float


def perturbations(amps: AmplitudeSlice, jets: StepJets, chi: float, t: float) -> PerturbationSlice:
    """
    w_p = Σ a W, w_c = Σ (∇a × W^c + a W̃^c), w_t = −μ⁻¹ Σ P_H P_{≠0}(a²|W|² k₁).

    w_p + w_c is taken from the curl form curl(Σ a W^c), so it is divergence-free per mode;
    identity_residual compares it with the direct formula.
    """
    grid = amps.R_ell.grid_dims
    if tuple(jets.grid) != grid:
        raise ShapeMismatchError(f"jets on {jets.grid} cannot perturb amplitudes on {grid}")

    w_p = SpectralField.zeros(grid, VECTOR)
    w_c_direct = SpectralField.zeros(grid, VECTOR)
    potential = SpectralField.zeros(grid, VECTOR)
    temporal = 0.0
    high_mass = 0.0
    for k, a in enumerate(amps.a):
        W = jets.jet(k, t)
        W_c, W_tilde = jets.correctors(k, t)
        a_s = _samples(a)[0]
        W_s, W_c_s = _samples(W), _samples(W_c)
        mass = (W_s ** 2).sum(axis=0)

        w_p = w_p + from_physical(a_s * W_s, grid)
        cross = np.cross(_samples(gradient(a)), W_c_s, axis=0)
        w_c_direct = w_c_direct + from_physical(cross + a_s * _samples(W_tilde), grid)
        potential = potential + from_physical(a_s * W_c_s, grid)
        temporal = temporal + _along(a_s ** 2 * mass, jets.k1[k])
        high_mass += float(np.mean(a_s ** 2 * mass) - np.mean(a_s ** 2) * np.mean(mass))

    w_pc = curl(potential)
    if np.ndim(temporal) == 0:
        w_t = SpectralField.zeros(grid, VECTOR)
    else:
        w_t = leray_project(project_nonzero(from_physical(temporal, grid))) * (-1.0 / jets.params.mu)
    return PerturbationSlice(
        t=float(t), chi=float(chi), w_p=w_p, w_c=w_pc - w_p, w_t=w_t, w_pc=w_pc,
        total=w_pc * chi + w_t * chi ** 2,
        identity_residual=(w_p + w_c_direct - w_pc).max_abs(),
        high_mass=chi ** 2 * high_mass,
    )


# ----------------------------------------------------------------------------------------------
# Reynolds stress

def _zero_components(grid) -> Dict[str, SpectralField]:
    return {name: SpectralField.zeros(grid, TENSOR) for name in COMPONENTS}


def assemble_reynolds(u_q: SpectralField, z_q: SpectralField, z_next: SpectralField, R_q: SpectralField,
                      t: float, chi: float, dchi: float, nu: float,
                      pert: Optional[PerturbationSlice] = None, amps: Optional[AmplitudeSlice] = None,
                      rates: Optional[Sequence[SpectralField]] = None,
                      jets: Optional[StepJets] = None) -> Tuple[Dict[str, SpectralField], Dict[str, object]]:
    """
    R_{q+1} = R_lin + R_osc.1 + R_osc.2 + R_osc.3 + R_osc.rem + R_cor + R_com + R_cut at one time.

    rates are ∂_t a_(k). R_osc.1 is its closed form only. Whatever part of the oscillation defect
    the closed forms of R_osc.1, R_osc.2 and R_osc.3 leave over (cross-direction products and grid
    truncation) is R_osc.rem = R(remainder), so that the relaxed system closes; its L² size is also
    returned as 'osc_remainder'. 'rate' is ∂_t w built from the same amplitude rates.
    """
    grid = R_q.grid_dims
    components = _zero_components(grid)
    diagnostics = {'osc_remainder': 0.0, 'osc1_formula': 0.0, 'rate': SpectralField.zeros(grid, VECTOR)}
    if np.array_equal(z_next.coeffs, z_q.coeffs):
        dz = None
    else:
        dz = z_next - z_q

    if pert is None:
        if chi != 0.0 or dchi != 0.0:
            raise PreconditionError(f"perturbations are required where χ ≠ 0 (t={t:.6g})")
        components['cut'] = R_q
        if dz is not None:
            components['com'] = _commutator(u_q, z_q, z_next, dz)
        return components, diagnostics

    if amps is None or rates is None or jets is None:
        raise PreconditionError("active slices need amplitudes, their rates and the jets")

    mu = jets.params.mu
    rate_potential = SpectralField.zeros(grid, VECTOR)
    low_high = SpectralField.zeros(grid, VECTOR)
    temporal_osc = 0.0
    temporal_rate = 0.0
    for k, (a, a_dot) in enumerate(zip(amps.a, rates)):
        k1 = jets.k1[k]
        W, W_dot = jets.jet(k, t), jets.jet(k, t, 1)
        W_c, _ = jets.correctors(k, t)
        W_c_dot, _ = jets.correctors(k, t, 1)
        a_s, a_dot_s = _samples(a)[0], _samples(a_dot)[0]
        W_s = _samples(W)
        mass = (W_s ** 2).sum(axis=0)
        mass_rate = 2.0 * (W_s * _samples(W_dot)).sum(axis=0)

        rate_potential = rate_potential + from_physical(a_dot_s * _samples(W_c) + a_s * _samples(W_c_dot), grid)

        # P_{≠0}(W⊗W)∇(a²) = P_{≠0}(|W|²)(k₁·∇a²) k₁
        a_sq = from_physical(a_s ** 2, grid)
        slope = SpectralField(np.tensordot(k1, gradient(a_sq).coeffs, axes=1)[None])
        high = project_nonzero(from_physical(mass, grid))
        low_high = low_high + from_physical(_along(_samples(high)[0] * _samples(slope)[0], k1), grid)

        energy_rate = 2.0 * a_s * a_dot_s * mass
        temporal_osc = temporal_osc + _along(energy_rate, k1)
        temporal_rate = temporal_rate + _along(energy_rate + a_s ** 2 * mass_rate, k1)

    w = pert.total
    uz = u_q + z_q
    w_pc_rate = curl(rate_potential)
    w_t_rate = leray_project(project_nonzero(from_physical(temporal_rate, grid))) * (-1.0 / mu)

    components['lin'] = (inverse_divergence(w_pc_rate * chi) - inverse_divergence(laplacian(w)) * nu
                         + traceless_outer(uz, w) + traceless_outer(w, uz))

    osc1 = inverse_divergence(project_nonzero(low_high)) * chi ** 2
    osc2 = inverse_divergence(project_nonzero(from_physical(temporal_osc, grid))) * (-chi ** 2 / mu)
    osc3 = (R_q - amps.R_ell) * chi ** 2
    target = leray_project(divergence(outer_product(pert.w_p, pert.w_p) * chi ** 2 + R_q * chi ** 2)
                           + w_t_rate * chi ** 2)
    remainder = project_nonzero(target - leray_project(divergence(osc1 + osc2 + osc3)))
    components['osc1'] = osc1
    components['osc_rem'] = inverse_divergence(remainder)
    components['osc2'] = osc2
    components['osc3'] = osc3
    diagnostics['osc_remainder'] = norm(remainder, 'Hs', s=0.0)
    diagnostics['osc1_formula'] = norm(osc1, 'Hs', s=0.0)

    w_p_tilde = pert.w_p * chi
    w_ct = pert.w_c * chi + pert.w_t * chi ** 2
    components['cor'] = traceless_outer(w_p_tilde, w_ct) + traceless_outer(w_ct, w)
    if dz is not None:
        components['com'] = _commutator(u_q + w, z_q, z_next, dz)
    components['cut'] = (inverse_divergence(pert.w_pc * dchi + pert.w_t * (2.0 * chi * dchi))
                         + R_q * (1.0 - chi ** 2))
    diagnostics['rate'] = (pert.w_pc * dchi + w_pc_rate * chi + pert.w_t * (2.0 * chi * dchi) + w_t_rate * chi ** 2)
    return components, diagnostics


def _commutator(u_next: SpectralField, z_q: SpectralField, z_next: SpectralField, dz: SpectralField) -> SpectralField:
    return (traceless_outer(u_next, dz) + traceless_outer(dz, u_next)
            + traceless_outer(z_next, z_next) - traceless_outer(z_q, z_q))


# ----------------------------------------------------------------------------------------------
# Residual of the relaxed system

def _spatial_residual(u: SpectralField, R: SpectralField, z: Optional[SpectralField], nu: float) -> SpectralField:
    v = u if z is None else u + z
    return divergence(outer_product(v, v)) - laplacian(u) * nu - divergence(R)


def _fd_rate(index: int, u_at, dt: float, n: int) -> SpectralField:
    """∂_t u at one slice from the 4th-order stencil over neighbouring slices"""
    offsets, weights = derivative_stencil(index, n)
    return SpectralField(sum(w * u_at(index + o).coeffs for o, w in zip(offsets, weights)) / dt)


def residual(u: FieldSeries, R: FieldSeries, z: Optional[FieldSeries], nu: float) -> float:
    """max over stored t of ‖P_H[∂_t u − νΔu + div((u+z)⊗(u+z)) − div R]‖_{L²}"""
    z_series = z if z is not None else FieldSeries.zeros(u.times, u.grid_dims, VECTOR)
    for name, series in (('R', R), ('z', z_series)):
        _check_aligned(u, series, name)
    if u.is_constant and R.is_constant and z_series.is_constant:
        value = leray_project(_spatial_residual(u.slice(0), R.slice(0), z_series.slice(0), nu))
        return norm(value, 'Hs', s=0.0)
    dt = uniform_step(u.times)
    n = len(u)
    worst = 0.0
    for i in range(n):
        value = _fd_rate(i, u.slice, dt, n) + _spatial_residual(u.slice(i), R.slice(i), z_series.slice(i), nu)
        worst = max(worst, norm(leray_project(value), 'Hs', s=0.0))
    return worst


# ----------------------------------------------------------------------------------------------
# The step

@dataclass
class StepResult:
    """Outputs of one step at one λ_{q+1}"""

    lam: float
    level: LevelSlice
    params: JetParams
    eps: float
    times: np.ndarray
    u_next: FieldSeries
    stored: Dict[str, FieldSeries]
    norms: pd.DataFrame
    per_time: pd.DataFrame
    residual: float
    baseline: float
    scale: float
    stats: Dict[str, object] = field(default_factory=dict)

    @property
    def p(self) -> float:
        return lebesgue_exponent(self.eps)

    @property
    def floor(self) -> float:
        """Discretization floor: the level-q residual, or a relative floor when that vanishes"""
        return max(self.baseline, TOLERANCES['residual_relative'] * self.scale)

    def residual_ok(self, factor: float = TOLERANCES['residual_floor_factor']) -> bool:
        return self.residual <= factor * self.floor

    def component_norms(self, kind: str = 'Lp') -> Dict[str, float]:
        """C_T norms: max over the stored times of the per-slice norm"""
        table = self.norms.groupby('component')[kind].max()
        return {name: float(table.get(name, 0.0)) for name in COMPONENTS}

    def perturbation_norms(self, rho: float) -> Dict[str, float]:
        return {name: float(self.per_time[f"{name}_L{rho:g}"].max()) for name in PERTURBATIONS}


class ConvexIntegrationStep:
    """Runs q → q+1 at one λ_{q+1} and collects every diagnostic on the way"""

    def __init__(self, state: IterationState, lam: Optional[float] = None,
                 wave_set: Optional[WaveVectorSet] = None, profiles: Optional[JetProfiles] = None,
                 energy_profile: Optional[EnergyProfile] = None, z_next: Optional[FieldSeries] = None,
                 jet_mode: str = 'desk', sigma_factor: float = 1.0, eps: float = STEP_DEFAULTS['eps'],
                 allow_truncation: bool = STEP_DEFAULTS['allow_truncation'],
                 store_every: int = STEP_DEFAULTS['store_every'], keep_fields: bool = True,
                 perturbation_rhos: Sequence[float] = tuple(STEP_DEFAULTS['perturbation_rhos'])):
        self.state = state
        self.lam = float(lam if lam is not None else state.level.lambda_next)
        self.level = replace(state.level, lambda_next=self.lam)
        self.eps = eps
        self.p = lebesgue_exponent(eps)
        self.store_every = max(1, int(store_every))
        self.keep_fields = keep_fields
        self.perturbation_rhos = tuple(perturbation_rhos)

        self.wave_set = wave_set or build_wavevector_set()
        self.profiles = profiles or build_profiles(ToolkitConfig.JETS['profile_resolution'])
        self.params = JetParams.from_lambda(self.lam, mode=jet_mode, wave_set=self.wave_set, strict_shifts=False,
                                            sigma_factor=sigma_factor)
        self.jets = StepJets(self.params, self.profiles, state.grid, self.wave_set, state.dt,
                             allow_truncation=allow_truncation)
        self.chi = CutoffChi(self.level.T_next, self.level.T_after_next)

        self.z_next = z_next if z_next is not None else state.z
        _check_aligned(state.u, self.z_next, 'z_next')
        self.energy_profile = energy_profile or step_energy_profile(state)
        self.energies = state.energies()
        self.gamma = gamma_series(state.times, self.energy_profile, self.energies, self.level)
        self.mollifier = _TimeMollifier(state.R, self.level.ell, history='error')

        self._amplitudes: Dict[int, AmplitudeSlice] = {}
        self._perturbations: Dict[int, Optional[PerturbationSlice]] = {}
        self._velocities: Dict[int, SpectralField] = {}

        # Statistics
        self.stats = {
            'slices': len(state.times),
            'active_slices': 0,
            'amplitude_slices': 0,
            'perturbation_slices': 0,
            'worst_velcancel': 0.0,
            'worst_identity': 0.0,
            'worst_divergence': 0.0,
            'truncated_jets': bool(self.jets.family.truncated),
            'time_sampling': float(self.jets.sampling),
        }

    # -- per-slice objects, computed on demand and evicted behind the sweep

    def _is_active(self, index: int) -> bool:
        t = self.state.times[index]
        return self.chi(t) > 0.0 or self.chi.derivative(t) != 0.0

    def amplitude_slice(self, index: int) -> AmplitudeSlice:
        if index not in self._amplitudes:
            amps = amplitudes(self.mollifier.at(index), float(self.gamma[index]), self.level.ell,
                              self.wave_set, t=float(self.state.times[index]))
            self._amplitudes[index] = amps
            self.stats['amplitude_slices'] += 1
            self.stats['worst_velcancel'] = max(self.stats['worst_velcancel'], amps.velcancel_residual)
        return self._amplitudes[index]

    def amplitude_rates(self, index: int) -> List[SpectralField]:
        """∂_t a_(k) from the backward 4th-order stencil"""
        offsets, weights = derivative_stencil(index, len(self.state.times), causal=True)
        slices = [self.amplitude_slice(index + o) for o in offsets]
        rates = []
        for k in range(len(self.wave_set)):
            coeffs = sum(w * s.a[k].coeffs for s, w in zip(slices, weights)) / self.state.dt
            rates.append(SpectralField(coeffs))
        return rates

    def perturbation_slice(self, index: int) -> Optional[PerturbationSlice]:
        if index not in self._perturbations:
            if not self._is_active(index):
                self._perturbations[index] = None
            else:
                t = float(self.state.times[index])
                pert = perturbations(self.amplitude_slice(index), self.jets, self.chi(t), t)
                self._perturbations[index] = pert
                self.stats['perturbation_slices'] += 1
                self.stats['worst_identity'] = max(self.stats['worst_identity'], pert.identity_residual)
        return self._perturbations[index]

    def velocity(self, index: int) -> SpectralField:
        """u_{q+1} at one slice; where χ vanishes it is u_q itself"""
        if index not in self._velocities:
            pert = self.perturbation_slice(index)
            u = self.state.u.slice(index)
            self._velocities[index] = u if pert is None else u + pert.total
        return self._velocities[index]

    def reynolds_slice(self, index: int) -> Tuple[Dict[str, SpectralField], Dict[str, float]]:
        t = float(self.state.times[index])
        chi, dchi = self.chi(t), self.chi.derivative(t)
        pert = self.perturbation_slice(index)
        amps = rates = None
        if pert is not None:
            amps = self.amplitude_slice(index)
            rates = self.amplitude_rates(index)
        return assemble_reynolds(self.state.u.slice(index), self.state.z.slice(index), self.z_next.slice(index),
                                 self.state.R.slice(index), t, chi, dchi, self.state.nu,
                                 pert=pert, amps=amps, rates=rates, jets=self.jets)

    def _evict_before(self, index: int):
        for cache in (self._amplitudes, self._perturbations, self._velocities):
            for key in [k for k in cache if k < index]:
                del cache[key]
        self.mollifier.evict_before(index)

    def _time_row(self, index: int, diagnostics, u_next: SpectralField, residual_value: float,
                  fd_value: float, baseline_value: float, rate: float) -> Dict[str, float]:
        t = float(self.state.times[index])
        chi = self.chi(t)
        pert = self.perturbation_slice(index)
        row = {'t': t, 'chi': chi, 'dchi': self.chi.derivative(t), 'active': pert is not None,
               'gamma': float(self.gamma[index]), 'residual': residual_value, 'residual_fd': fd_value,
               'baseline': baseline_value, 'rate': rate, 'divergence': u_next.divergence_defect(),
               'energy_prev': float(self.energies[index]),
               'energy_next': float(np.sum(np.abs(u_next.coeffs + self.z_next.slice(index).coeffs) ** 2)),
               'osc_remainder': diagnostics['osc_remainder'], 'osc1_formula': diagnostics['osc1_formula'],
               'rho_mean': np.nan, 'velcancel': np.nan, 'identity_residual': np.nan,
               'principal_mass': 0.0, 'principal_target': 0.0, 'high_mass': 0.0}
        if pert is not None:
            amps = self.amplitude_slice(index)
            row.update({
                'rho_mean': float(np.mean(amps.rho)),
                'velcancel': amps.velcancel_residual,
                'identity_residual': pert.identity_residual,
                'principal_mass': chi ** 2 * float(np.sum(np.abs(pert.w_p.coeffs) ** 2)),
                'principal_target': 3.0 * chi ** 2 * (float(np.mean(amps.rho)) + amps.gamma),
                'high_mass': pert.high_mass,
            })
        for rho in self.perturbation_rhos:
            for name in PERTURBATIONS:
                value = 0.0 if pert is None else norm(getattr(pert, name), 'Lp', p=rho)
                row[f"{name}_L{rho:g}"] = value
        return row

    def run(self) -> StepResult:
        """Sweep the time grid once, keeping only a short window of slices in memory"""
        start_time = time.time()
        state = self.state
        times, dt, n = state.times, state.dt, len(state.times)
        stored_index = sorted(set(range(0, n, self.store_every)) | {n - 1})
        stored_set = set(stored_index)
        stored = {name: [] for name in COMPONENTS + ('R_next', 'u_next')}
        velocities, norm_rows, time_rows = [], [], []
        worst, baseline, scale = 0.0, 0.0, 0.0

        logger.info(f"🌀 Step q={state.q} → {state.q + 1} at λ={self.lam:g}: {n} slices on {state.grid}, "
                    f"χ active from t={self.chi.start:.4g}")

        for i in range(n):
            components, diagnostics = self.reynolds_slice(i)
            R_next = sum(components.values(), SpectralField.zeros(state.grid, TENSOR))
            u_next = self.velocity(i)
            z_next = self.z_next.slice(i)

            # ∂_t u_{q+1} = ∂_t u_q + ∂_t w, the latter from χ' and the amplitude rates
            base_rate = _fd_rate(i, state.u.slice, dt, n)
            rate_vec = leray_project(base_rate + diagnostics['rate'])
            spatial = leray_project(_spatial_residual(u_next, R_next, z_next, state.nu))
            value = norm(rate_vec + spatial, 'Hs', s=0.0)
            fd_value = norm(leray_project(_fd_rate(i, self.velocity, dt, n)) + spatial, 'Hs', s=0.0)
            base_value = norm(leray_project(base_rate + _spatial_residual(
                state.u.slice(i), state.R.slice(i), state.z.slice(i), state.nu)), 'Hs', s=0.0)
            rate = norm(rate_vec, 'Hs', s=0.0)
            worst, baseline, scale = max(worst, value), max(baseline, base_value), max(scale, rate)
            self.stats['worst_divergence'] = max(self.stats['worst_divergence'], u_next.divergence_defect())

            if self.perturbation_slice(i) is not None:
                self.stats['active_slices'] += 1

            for name, comp in components.items():
                if comp.max_abs() == 0.0:
                    l1 = lp = l2 = 0.0
                else:
                    l1, lp, l2 = norm(comp, 'Lp', p=1.0), norm(comp, 'Lp', p=self.p), norm(comp, 'Hs', s=0.0)
                norm_rows.append({'t': float(times[i]), 'component': name, 'L1': l1, 'Lp': lp, 'L2': l2})
            time_rows.append(self._time_row(i, diagnostics, u_next, value, fd_value, base_value, rate))

            if self.keep_fields:
                velocities.append(u_next)
            if i in stored_set:
                for name, comp in components.items():
                    stored[name].append(comp)
                stored['R_next'].append(R_next)
                stored['u_next'].append(u_next)

            self._evict_before(i - 4)

        stored_times = times[stored_index]
        stored_series = {name: FieldSeries.from_fields(stored_times, fields) for name, fields in stored.items()}
        u_series = FieldSeries.from_fields(times, velocities) if self.keep_fields else stored_series['u_next']

        self.stats['elapsed'] = calculate_processing_time(start_time)
        result = StepResult(lam=self.lam, level=self.level, params=self.params, eps=self.eps, times=times,
                            u_next=u_series, stored=stored_series, norms=pd.DataFrame(norm_rows),
                            per_time=pd.DataFrame(time_rows), residual=worst, baseline=baseline, scale=scale,
                            stats=dict(self.stats))
        logger.info(f"✅ Step at λ={self.lam:g} done in {self.stats['elapsed']}: residual {worst:.3e} "
                    f"(floor {result.floor:.3e}), velcancel {self.stats['worst_velcancel']:.2e}, "
                    f"curl identity {self.stats['worst_identity']:.2e}")
        return result


def run_lambda_sweep(state: IterationState, lambda_sweep: Sequence[float], threads: Optional[int] = None,
                     **kwargs) -> List[StepResult]:
    """One step per λ_{q+1}, without full velocity series, on the worker pool"""
    wave_set = kwargs.pop('wave_set', None) or build_wavevector_set()
    profiles = kwargs.pop('profiles', None) or build_profiles(ToolkitConfig.JETS['profile_resolution'])
    energy_profile = kwargs.pop('energy_profile', None) or step_energy_profile(state)

    def one(lam: float) -> StepResult:
        return ConvexIntegrationStep(state, lam, wave_set=wave_set, profiles=profiles,
                                     energy_profile=energy_profile, keep_fields=False, **kwargs).run()

    return run_parallel(one, list(lambda_sweep), threads)


# ----------------------------------------------------------------------------------------------
# Reports

def _fit_rows(suite: str, names: Sequence[str], measured: Sequence[Mapping[str, float]],
              lambda_sweep: Sequence[float], predicted: Mapping[str, float], label: str) -> Tuple[pd.DataFrame, List[Dict]]:
    if len(measured) != len(lambda_sweep):
        raise PreconditionError(f"{len(measured)} measurements for {len(lambda_sweep)} λ values")
    if len(lambda_sweep) < 4:
        raise RegressionError(f"exponent fits need at least 4 λ points, got {len(lambda_sweep)}")
    table, rows = [], []
    for name in names:
        values = [float(m[name]) for m in measured]
        if all(v == 0.0 for v in values):
            slope = -math.inf
        else:
            try:
                slope, _ = loglog_fit(lambda_sweep, values, floor=1e-300)
            except RegressionError:
                slope = math.nan
        expected = predicted.get(name, math.nan)
        gap = abs(slope - expected) if math.isfinite(slope) and math.isfinite(expected) else math.nan
        entry = {'component': name, 'norm': label, 'fitted_exponent': slope, 'predicted_exponent': expected,
                 'residual': gap, 'negative': bool(slope < 0)}
        entry.update({f"lambda={lam:g}": v for lam, v in zip(lambda_sweep, values)})
        table.append(entry)
        rows.append({'suite': suite, 'point': f"{name},{label}", 'measured': slope,
                     'predicted': expected, 'residual': gap})
    return pd.DataFrame(table), rows


def component_norm_report(components: Sequence[Mapping[str, float]], p: float,
                          lambda_sweep: Sequence[float], eps: float = STEP_DEFAULTS['eps']) -> Dict[str, object]:
    """Fitted λ-exponents of ‖R_·‖_{C_TL^p} per component, next to the predicted exponents"""
    table, rows = _fit_rows('components', COMPONENTS, components, lambda_sweep,
                            predicted_component_exponents(eps), f"L{p:.4g}")
    fitted = table[np.isfinite(table['predicted_exponent'])]
    logger.info("Component exponents: " + ", ".join(
        f"{r.component} {r.fitted_exponent:.3f} (pred {r.predicted_exponent:.3f})" for r in fitted.itertuples()))
    return {'table': table, 'rows': rows, 'p': p}


def perturbation_norm_report(measured: Sequence[Mapping[str, float]], rho: float,
                             lambda_sweep: Sequence[float]) -> Dict[str, object]:
    """Fitted λ-exponents of ‖w_p‖, ‖w_c‖, ‖w_t‖ in C_TL^ρ"""
    table, rows = _fit_rows('perturbations', PERTURBATIONS, measured, lambda_sweep,
                            predicted_perturbation_exponents(rho), f"L{rho:g}")
    return {'table': table, 'rows': rows, 'rho': rho}


def _regime(t: float, level: LevelSlice, start: float) -> str:
    if t >= level.T_next + level.ell:
        return 'J1'
    if t >= level.T_next:
        return 'J2'
    if t >= start:
        return 'J3'
    return 'unperturbed'


def energy_gap_report(results, profile: EnergyProfile, n_mc: Optional[int] = None) -> pd.DataFrame:
    """
    e(t) − E‖u_{q+1}+z_{q+1}‖² per time with its regime and target band, the inherited gap
    e − E‖u_q+z_q‖², and the principal mass ‖w̃_p‖² against 3⨍χ²(ρ+γ_q).

    The expectation is the mean over the first n_mc results (one per noise path).
    """
    results = [results] if isinstance(results, StepResult) else list(results)
    n_mc = len(results) if n_mc is None else int(n_mc)
    if n_mc < 1 or n_mc > len(results):
        raise PreconditionError(f"n_mc must lie in [1, {len(results)}], got {n_mc}")
    batch = results[:n_mc]
    reference = batch[0]
    level = reference.level
    start = CutoffChi(level.T_next, level.T_after_next).start

    def mean(column: str) -> np.ndarray:
        return np.mean([r.per_time[column].to_numpy() for r in batch], axis=0)

    times = reference.per_time['t'].to_numpy()
    e = np.asarray(profile(times), dtype=float)
    bands = {'J1': (0.5 * level.delta_after_next, 2.0 * level.delta_next),
             'J2': (0.5 * level.delta_after_next, 2.0 * level.delta_next),
             'J3': (0.5 * level.delta_third, 2.0 * level.delta_after_next),
             'unperturbed': (math.nan, math.nan)}

    frame = pd.DataFrame({
        't': times,
        'regime': [_regime(t, level, start) for t in times],
        'gap': e - mean('energy_next'),
        'inherited_gap': e - mean('energy_prev'),
        'principal_mass': mean('principal_mass'),
        'principal_target': mean('principal_target'),
        'high_mass': mean('high_mass'),
    })
    frame['lower'] = [bands[r][0] for r in frame['regime']]
    frame['upper'] = [bands[r][1] for r in frame['regime']]
    frame['within_band'] = np.where(frame['regime'] == 'unperturbed', True,
                                    (frame['gap'] >= frame['lower']) & (frame['gap'] <= frame['upper']))
    frame['mass_defect'] = np.abs(frame['principal_mass'] - frame['principal_target'])
    return frame
