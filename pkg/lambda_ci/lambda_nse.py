#!/usr/bin/env python3
"""
Λ-Navier-Stokes solver and its diagnostics.

The system is

    ∂_t u = νΔu − B_Λ(u),   B_Λ(u) = P_H P_{<Λ(t)} div(P_{<Λ(t)}u ⊗ P_{<Λ(t)}u),   u(0) = v₀,

advanced with the viscous semigroup applied exactly per mode and classical RK4 for the
truncated nonlinearity in the integrating-factor variables.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_simpson

from .config import ToolkitConfig
from .exceptions import (
    AlignmentError,
    RegressionError,
    InstabilityError,
    MeanViolationError,
    PreconditionError,
    ShapeMismatchError,
)
from .spectral_field import (
    TENSOR,
    VECTOR,
    FieldSeries,
    SpectralField,
    _check_grid,
    divergence,
    from_physical,
    laplacian,
    leray_project,
    norm,
    outer_product,
    project_above,
    project_band,
    project_below,
    random_field,
    resample,
    to_physical,
    wavenumber_norm,
)
from .utils import calculate_processing_time, loglog_fit

logger = logging.getLogger(__name__)

RUN_DEFAULTS = ToolkitConfig.SOLVER


def _ramp(x, w: float) -> np.ndarray:
    """C³ convex ramp: 0 for x ≤ −w, x for x ≥ w, quintic-derivative blend in between"""
    tau = (np.clip(x, -w, w) + w) / (2.0 * w)
    return 2.0 * w * (tau ** 6 - 3.0 * tau ** 5 + 2.5 * tau ** 4)


def _soft_min(v, c: float, w: float) -> np.ndarray:
    x = v - c
    return np.where(x >= w, c, np.where(x <= -w, v, v - _ramp(x, w)))


def _soft_max(v, f: float, w: float) -> np.ndarray:
    x = v - f
    return np.where(x >= w, v, np.where(x <= -w, f, f + _ramp(x, w)))


@dataclass(frozen=True)
class LambdaSchedule:
    """
    Frequency cutoff Λ(t) = min(cap, max(floor, t^{−exponent})), with both junctions
    smoothed in log space over a window of relative width `window`.

    The smoothed minimum never exceeds either argument, so Λ(t) ≤ t^{−exponent} on (0, T].
    The floor must sit a full window below T^{−exponent}; it then never binds on (0, T].
    """

    cap: float
    floor: float
    T: float
    exponent: float = 1.0 / 8.0
    window: float = RUN_DEFAULTS['smoothing_window']

    def __post_init__(self):
        if self.cap <= 0 or self.floor <= 0 or self.T <= 0 or self.exponent <= 0:
            raise PreconditionError(
                f"schedule needs positive cap, floor, T and exponent, got "
                f"cap={self.cap}, floor={self.floor}, T={self.T}, exponent={self.exponent}"
            )
        w = self.w
        if self.floor > self.T ** -self.exponent * math.exp(-2.0 * w):
            raise PreconditionError(
                f"floor {self.floor} is not below T^(-{self.exponent:.3f}) = {self.T ** -self.exponent:.4f} "
                f"by the smoothing window"
            )
        if self.cap < self.floor * math.exp(2.0 * w):
            raise PreconditionError(f"cap {self.cap} must exceed floor {self.floor} by the smoothing window")

    @property
    def w(self) -> float:
        return math.log1p(self.window)

    def log_value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide='ignore'):
            v = np.where(t > 0, -self.exponent * np.log(np.where(t > 0, t, 1.0)), np.inf)
        capped = _soft_min(v, math.log(self.cap), self.w)
        return _soft_max(capped, math.log(self.floor), self.w)

    def __call__(self, t):
        value = np.exp(self.log_value(t))
        return float(value) if np.ndim(value) == 0 else value

    def envelope_violation(self, times: Sequence[float]) -> float:
        """max over t > 0 of Λ(t) − t^{−exponent}; nonpositive for a valid schedule"""
        t = np.asarray(times, dtype=float)
        t = t[t > 0]
        if t.size == 0:
            return 0.0
        return float(np.max(self(t) - t ** -self.exponent))

    @classmethod
    def for_grid(cls, grid: Sequence[int], T: float, exponent: float = 1.0 / 8.0,
                 cap: Optional[float] = None, floor: Optional[float] = None) -> 'LambdaSchedule':
        """Cap at a quarter of the smallest grid size, so P_{<Λ} stays inside the Nyquist box"""
        grid = _check_grid(grid)
        window = RUN_DEFAULTS['smoothing_window']
        cap = cap if cap is not None else min(grid) / 4.0
        if floor is None:
            admissible = T ** -exponent * math.exp(-2.0 * math.log1p(window))
            floor = min(RUN_DEFAULTS['floor'], admissible)
        return cls(cap=float(cap), floor=float(floor), T=float(T), exponent=exponent, window=window)

    @classmethod
    def desk(cls, grid: Sequence[int], T: float, **kwargs) -> 'LambdaSchedule':
        return cls.for_grid(grid, T, exponent=1.0 / 8.0, **kwargs)

    @classmethod
    def h3(cls, grid: Sequence[int], T: float, **kwargs) -> 'LambdaSchedule':
        """Regular-data variant with the slower t^{−1/10} growth"""
        return cls.for_grid(grid, T, exponent=1.0 / 10.0, **kwargs)

    def as_dict(self) -> Dict[str, float]:
        return {'cap': self.cap, 'floor': self.floor, 'T': self.T,
                'exponent': self.exponent, 'window': self.window}


@dataclass(eq=False)
class SolverRun:
    """A finished Λ-NSE run: stored states plus per-step diagnostics"""

    v0: SpectralField
    nu: float
    T: float
    dt: float
    schedule: LambdaSchedule
    trajectory: FieldSeries
    diagnostics: pd.DataFrame
    steps: int = 0
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def grid(self):
        return self.trajectory.grid_dims

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    def state(self, index: int) -> SpectralField:
        return self.trajectory.slice(index)

    def lambda_values(self) -> np.ndarray:
        return np.atleast_1d(self.schedule(self.times))


# ----------------------------------------------------------------------------------------------
# Initial data

def taylor_green(grid: Sequence[int], normalize: bool = True) -> SpectralField:
    """(sin x̃ cos ỹ cos z̃, −cos x̃ sin ỹ cos z̃, 0) with x̃ = 2πx"""
    grid = _check_grid(grid)
    X, Y, Z = np.meshgrid(*[2.0 * np.pi * np.arange(n) / n for n in grid], indexing='ij')
    samples = np.stack([
        np.sin(X) * np.cos(Y) * np.cos(Z),
        -np.cos(X) * np.sin(Y) * np.cos(Z),
        np.zeros_like(X),
    ])
    f = from_physical(samples)
    if normalize:
        f = f * (1.0 / norm(f, 'Hs', s=0.0))
    return f


def shear_flow(grid: Sequence[int], amplitude: float = 1.0) -> SpectralField:
    """u = (a sin 2πx₂, 0, 0); its own nonlinearity vanishes identically"""
    grid = _check_grid(grid)
    coeffs = np.zeros((VECTOR,) + grid, dtype=np.complex128)
    coeffs[0, 0, 1, 0] = -0.5j * amplitude
    coeffs[0, 0, -1, 0] = 0.5j * amplitude
    return SpectralField(coeffs)


def rough_initial_data(grid: Sequence[int], seed: int = RUN_DEFAULTS['init_seed'],
                       slope: float = RUN_DEFAULTS['rough_slope'],
                       band: Optional[float] = None) -> SpectralField:
    """
    Unit-L² divergence-free random field with shell spectrum |ξ|^{−slope}, barely in L².

    With band set, only modes |ξ| ≤ band are kept before normalizing, so P<Λ acts as the
    identity on the data while Λ ≥ 2·band.
    """
    if band is None:
        return random_field(grid, VECTOR, seed=seed, slope=slope, divergence_free=True, normalize=True)
    if band < 1:
        raise PreconditionError(f"data band must keep the first shell, got {band}")
    f = random_field(grid, VECTOR, seed=seed, slope=slope, divergence_free=True)
    keep = wavenumber_norm(f.grid_dims) <= band * (1.0 + 1e-12)
    f = SpectralField(f.coeffs * keep)
    return f * (1.0 / norm(f, 'Hs', s=0.0))


def h3_initial_data(grid: Sequence[int], seed: int = RUN_DEFAULTS['init_seed'],
                    slope: float = RUN_DEFAULTS['h3_slope']) -> SpectralField:
    return random_field(grid, VECTOR, seed=seed, slope=slope, divergence_free=True, normalize=True)


def initial_data(kind: str, grid: Sequence[int], seed: int = RUN_DEFAULTS['init_seed'],
                 slope: Optional[float] = None) -> SpectralField:
    if kind == 'taylor_green':
        return taylor_green(grid)
    if kind == 'shear':
        return shear_flow(grid)
    if kind == 'zero':
        return SpectralField.zeros(grid, VECTOR)
    if kind == 'rough':
        return rough_initial_data(grid, seed, RUN_DEFAULTS['rough_slope'] if slope is None else slope)
    if kind == 'h3':
        return h3_initial_data(grid, seed, RUN_DEFAULTS['h3_slope'] if slope is None else slope)
    raise PreconditionError(f"unknown initial data kind '{kind}'")


# ----------------------------------------------------------------------------------------------
# Time stepping

def nonlinearity(u: SpectralField, lam: float) -> SpectralField:
    """B_Λ(u) = P_H P_{<Λ} div(P_{<Λ}u ⊗ P_{<Λ}u)"""
    low = project_below(u, lam)
    return leray_project(project_below(divergence(outer_product(low, low)), lam))


def _inner(a: SpectralField, b: SpectralField) -> float:
    return float(np.real(np.vdot(a.coeffs, b.coeffs)))


def _energy(u: SpectralField) -> float:
    return 0.5 * float(np.sum(np.abs(u.coeffs) ** 2))


def _dissipation(u: SpectralField, nu: float) -> float:
    k2 = (2.0 * np.pi * wavenumber_norm(u.grid_dims)) ** 2
    return nu * float(np.sum(k2 * np.abs(u.coeffs) ** 2))


def step_times(T: float, dt: float, geometric_levels: int) -> np.ndarray:
    """Uniform steps of dt merged with the checkpoints T·2^{−j}, j = 1..levels"""
    if T <= 0 or dt <= 0:
        raise PreconditionError(f"T and dt must be positive, got T={T}, dt={dt}")
    n = int(math.floor(T / dt + 1e-9))
    uniform = np.arange(n + 1) * dt
    geometric = T * 2.0 ** -np.arange(1, int(geometric_levels) + 1)
    times = np.unique(np.concatenate([uniform, geometric, [T]]))
    times = times[times <= T * (1 + 1e-12)]
    # merge nodes closer than round-off
    keep = np.concatenate([[True], np.diff(times) > 1e-12 * T])
    times = times[keep]
    times[-1] = T
    return times


def _store_mask(times: np.ndarray, T: float, dt: float, geometric_levels: int, every: int) -> np.ndarray:
    tol = 1e-9 * T
    mask = np.zeros(times.size, dtype=bool)
    mask[0] = mask[-1] = True
    for j in range(1, int(geometric_levels) + 1):
        mask |= np.abs(times - T * 2.0 ** -j) <= tol
    if every > 0:
        ratio = times / (every * dt)
        mask |= np.abs(ratio - np.round(ratio)) * every * dt <= tol
    return mask


def solve(v0: SpectralField, schedule: LambdaSchedule, nu: float = RUN_DEFAULTS['nu'],
          T: float = RUN_DEFAULTS['T'], dt: float = RUN_DEFAULTS['dt'],
          grid: Optional[Sequence[int]] = None,
          geometric_levels: int = RUN_DEFAULTS['geometric_levels'],
          store_every: int = RUN_DEFAULTS['store_every'],
          growth_tolerance: float = RUN_DEFAULTS['growth_tolerance']) -> SolverRun:
    """
    Integrate the Λ-NSE from v0 up to T.

    Energy and dissipation are recorded at every step, fields only at the store times
    (0, T, the geometric checkpoints and every `store_every` uniform steps). Λ(t) is
    evaluated at the RK4 stage times.
    """
    if v0.n_components != VECTOR:
        raise ShapeMismatchError(f"initial data must be a vector field, got {v0.n_components} components")
    if grid is not None:
        grid = _check_grid(grid)
        if grid != v0.grid_dims:
            v0 = SpectralField(resample(v0.coeffs, grid))
    if not v0.is_mean_free():
        raise MeanViolationError(f"initial data has mean {v0.mean()}")
    if not v0.is_divergence_free():
        raise PreconditionError(f"initial data is not divergence-free (defect {v0.divergence_defect():.3e})")
    if nu <= 0:
        raise PreconditionError(f"viscosity must be positive, got {nu}")

    times = step_times(T, dt, geometric_levels)
    stored = _store_mask(times, T, dt, geometric_levels, store_every)
    decay_rate = nu * (2.0 * np.pi * wavenumber_norm(v0.grid_dims)) ** 2
    factors: Dict[float, np.ndarray] = {}

    def semigroup(h: float) -> np.ndarray:
        key = round(h, 15)
        if key not in factors:
            factors[key] = np.exp(-decay_rate * h)
        return factors[key]

    def rhs(u: SpectralField, t: float) -> np.ndarray:
        return -nonlinearity(u, schedule(t)).coeffs

    logger.info(f"Solving Λ-NSE on {v0.grid_dims} to T={T} with dt={dt} ({times.size - 1} steps), nu={nu}")
    start = time.time()

    u = SpectralField(v0.coeffs.copy())
    states = [u.coeffs.copy()]
    rows = [_diagnostic_row(u, 0.0, schedule, nu)]

    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        E, E_half = semigroup(h), semigroup(h / 2.0)
        c = u.coeffs
        k1 = rhs(u, t)
        k2 = rhs(SpectralField(E_half * (c + 0.5 * h * k1)), t + h / 2.0)
        k3 = rhs(SpectralField(E_half * c + 0.5 * h * k2), t + h / 2.0)
        k4 = rhs(SpectralField(E * c + h * E_half * k3), t + h)
        new = E * c + h / 6.0 * (E * k1 + 2.0 * E_half * (k2 + k3) + k4)
        new[:, 0, 0, 0] = 0.0
        u_next = leray_project(SpectralField(new))

        before, after = _energy(u), _energy(u_next)
        if not np.isfinite(after) or (before > 0 and after > before * (1.0 + growth_tolerance)):
            raise InstabilityError(
                f"energy grew from {before:.6e} to {after:.6e} at t={times[i + 1]:.6e}; reduce dt below {h:.3e}"
            )
        u = u_next
        rows.append(_diagnostic_row(u, times[i + 1], schedule, nu))
        if stored[i + 1]:
            states.append(u.coeffs.copy())
            logger.debug(f"t={times[i + 1]:.6e} energy={after:.10e}")

    diagnostics = pd.DataFrame(rows)
    run = SolverRun(
        v0=v0, nu=nu, T=T, dt=dt, schedule=schedule,
        trajectory=FieldSeries(times[stored], np.stack(states)),
        diagnostics=diagnostics, steps=times.size - 1,
        meta={'geometric_levels': geometric_levels, 'store_every': store_every},
    )
    logger.info(f"Λ-NSE run finished in {calculate_processing_time(start)}: "
                f"{run.steps} steps, {len(run.trajectory)} stored states")
    return run


def _diagnostic_row(u: SpectralField, t: float, schedule: LambdaSchedule, nu: float) -> Dict[str, float]:
    lam = schedule(t)
    return {
        't': float(t),
        'Lambda': float(lam),
        'energy': _energy(u),
        'dissipation': _dissipation(u, nu),
        'skew': _inner(nonlinearity(u, lam), u),
    }


# ----------------------------------------------------------------------------------------------
# Diagnostics

def energy_balance_residual(run: SolverRun) -> pd.DataFrame:
    """|½‖u(t)‖² + ν∫₀ᵗ‖∇u‖² − ½‖v₀‖²| / ½‖v₀‖², with the integral by composite Simpson"""
    d = run.diagnostics
    t = d['t'].to_numpy()
    energy = d['energy'].to_numpy()
    dissipation = d['dissipation'].to_numpy()
    if t.size > 1:
        integral = cumulative_simpson(dissipation, x=t, initial=0.0)
    else:
        integral = np.zeros_like(t)
    e0 = _energy(run.v0)
    residual = np.zeros_like(t) if e0 == 0 else np.abs(energy + integral - e0) / e0
    return pd.DataFrame({'t': t, 'energy': energy, 'dissipation_integral': integral,
                         'balance_residual': residual})


def _doubled_samples(f: SpectralField) -> np.ndarray:
    return to_physical(f, oversample=2)


def _traceless_from_samples(a: np.ndarray, b: np.ndarray) -> SpectralField:
    """a ⊗̊ b on the doubled grid; exact for band-limited a, b on the base grid"""
    prod = a[:, None] * b[None, :]
    trace = (prod[0, 0] + prod[1, 1] + prod[2, 2]) / 3.0
    for i in range(3):
        prod[i, i] -= trace
    return from_physical(prod.reshape((TENSOR,) + a.shape[1:]))


def low_mode_stress(u: SpectralField, lam: float) -> SpectralField:
    """P_{≥Λ}(P_{<Λ}u ⊗̊ P_{<Λ}u) on the doubled grid"""
    low = _doubled_samples(project_below(u, lam))
    return project_above(_traceless_from_samples(low, low), lam)


def high_mode_nonlinearity(run: SolverRun, T_star_sweep: Sequence[float]) -> Dict[str, object]:
    """
    sup over [0, T*] of ‖P_{≥Λ}(P_{<Λ}u ⊗̊ P_{<Λ}u)‖_{L¹} for each T*, plus the band norms
    ‖P_{[Λ/6, 2Λ]}u‖_{L²} at the stored times.
    """
    lams = run.lambda_values()
    series = []
    for i, t in enumerate(run.times):
        u = run.state(i)
        series.append({
            't': float(t),
            'Lambda': float(lams[i]),
            'stress_L1': norm(low_mode_stress(u, lams[i]), 'Lp', p=1.0, oversample=1),
            'band_L2': norm(project_band(u, lams[i] / 6.0, 2.0 * lams[i]), 'Hs', s=0.0),
        })
    series = pd.DataFrame(series)

    rows = []
    for T_star in sorted(T_star_sweep):
        window = series[series['t'] <= T_star * (1 + 1e-12)]
        rows.append({
            'T_star': float(T_star),
            'sup_stress_L1': float(window['stress_L1'].max()) if len(window) else 0.0,
            'sup_band_L2': float(window['band_L2'].max()) if len(window) else 0.0,
        })
    table = pd.DataFrame(rows)
    monotone = bool(np.all(np.diff(table['sup_stress_L1'].to_numpy()) >= 0))
    return {'table': table, 'series': series, 'monotone': monotone}


def _heat_constant(s: float, nu: float) -> float:
    """sup_k |k|^s e^{−ν|k|²t} = (s/(2eν t))^{s/2}, returned without the t factor"""
    if s == 0:
        return 1.0
    return (s / (2.0 * math.e * nu)) ** (s / 2.0)


def regularity_report(run: SolverRun, s_list: Sequence[float], t_list: Sequence[float]) -> Dict[str, object]:
    """
    Measured sup_{τ∈[t,T]} ‖u(τ)‖_{Ḣˢ} against the shape (1 + t^{−s/2})‖v₀‖_{L²}.

    The constant is fitted as the largest measured/shape ratio. The envelope check fits the
    t-exponent of the measured norms and flags a decay faster than t^{−s/2}.
    """
    v0_norm = norm(run.v0, 'Hs', s=0.0)
    norms = {s: np.array([norm(run.state(i), 'Hs_dot', s=s) for i in range(len(run.times))]) for s in s_list}
    rows, summary = [], []
    for s in s_list:
        measured_all = []
        for t in t_list:
            window = run.times >= t * (1 - 1e-12)
            measured = float(norms[s][window].max()) if window.any() else 0.0
            shape = (1.0 + t ** (-s / 2.0)) * v0_norm
            heat = _heat_constant(s, run.nu) * t ** (-s / 2.0) * v0_norm
            rows.append({'s': s, 't': t, 'measured': measured, 'bound_shape': shape,
                         'ratio': measured / shape if shape > 0 else 0.0, 'heat_bound': heat})
            measured_all.append(measured)
        ratios = [r['ratio'] for r in rows if r['s'] == s]
        try:
            exponent, _ = loglog_fit(t_list, measured_all, floor=1e-300)
        except RegressionError:
            exponent = float("nan")
        summary.append({
            's': s,
            'constant': max(ratios) if ratios else 0.0,
            'fitted_exponent': exponent,
            'envelope_ok': bool(np.isnan(exponent) or exponent >= -s / 2.0 - 0.3),
        })
    return {'table': pd.DataFrame(rows), 'summary': pd.DataFrame(summary)}


def temporal_regularity_report(run: SolverRun, s_list: Sequence[float], t_list: Sequence[float]) -> pd.DataFrame:
    """
    sup_{τ∈[t,T]} ‖∂_t u(τ)‖_{Ḣˢ}, with ∂_t u = νΔu − B_Λ(u) at the stored states, against
    (1 + t^{−(s+2)/2})‖v₀‖ + (1 + Λ(t)^{2s+6})‖v₀‖².
    """
    v0_norm = norm(run.v0, 'Hs', s=0.0)
    lams = run.lambda_values()
    derivatives = [
        run.nu * laplacian(run.state(i)) - nonlinearity(run.state(i), lams[i])
        for i in range(len(run.times))
    ]
    rows = []
    for s in s_list:
        values = np.array([norm(d, 'Hs_dot', s=s) for d in derivatives])
        for t in t_list:
            window = run.times >= t * (1 - 1e-12)
            measured = float(values[window].max()) if window.any() else 0.0
            lam_t = run.schedule(t)
            shape = (1.0 + t ** (-(s + 2.0) / 2.0)) * v0_norm + (1.0 + lam_t ** (2.0 * s + 6.0)) * v0_norm ** 2
            rows.append({'s': s, 't': t, 'measured': measured, 'bound_shape': shape,
                         'ratio': measured / shape if shape > 0 else 0.0})
    return pd.DataFrame(rows)


def strong_continuity(run: SolverRun) -> Dict[str, object]:
    """‖u(t_j) − v₀‖_{L²} over the stored times, expected to shrink monotonically as t → 0"""
    order = np.argsort(run.times)
    rows = [{'t': float(run.times[i]), 'distance': norm(run.state(i) - run.v0, 'Hs', s=0.0)}
            for i in order if run.times[i] > 0]
    table = pd.DataFrame(rows, columns=['t', 'distance'])
    monotone = bool(np.all(np.diff(table['distance'].to_numpy()) >= -1e-14))
    return {'table': table, 'monotone': monotone}


def _series_distance(a: SolverRun, b: SolverRun) -> float:
    """max over common stored times of ‖u_a − u_b‖_{L²}, on the finer grid"""
    target = max(a.grid, b.grid)
    worst = 0.0
    for i, t in enumerate(a.times):
        match = np.flatnonzero(np.abs(b.times - t) <= 1e-9 * max(a.T, 1.0))
        if match.size == 0:
            continue
        diff = resample(a.state(i).coeffs, target) - resample(b.state(int(match[0])).coeffs, target)
        worst = max(worst, float(np.sqrt(np.sum(np.abs(diff) ** 2))))
    return worst


def refinement_convergence(v0: SpectralField, grids: Sequence[Sequence[int]], dts: Sequence[float],
                           nu: float = RUN_DEFAULTS['nu'], T: float = RUN_DEFAULTS['T'],
                           schedule: Optional[LambdaSchedule] = None,
                           geometric_levels: int = RUN_DEFAULTS['geometric_levels'],
                           store_every: int = RUN_DEFAULTS['store_every']) -> Dict[str, object]:
    """
    Run the same problem at successive resolutions and tabulate consecutive C_T L² distances.

    grids and dts are paired level by level; a single entry is broadcast. Every level shares one
    schedule, capped for the coarsest grid, so that the runs approximate the same solution.
    """
    n = max(len(grids), len(dts))
    grids = list(grids) * n if len(grids) == 1 else list(grids)
    dts = list(dts) * n if len(dts) == 1 else list(dts)
    if n < 3 or len(grids) != n or len(dts) != n:
        raise PreconditionError(f"refinement needs at least three paired levels, got {len(grids)} grids and {len(dts)} steps")
    if schedule is None:
        coarsest = min(grids, key=min)
        schedule = LambdaSchedule.for_grid(coarsest, T)

    runs = [solve(v0, schedule, nu=nu, T=T, dt=dt, grid=g, geometric_levels=geometric_levels,
                  store_every=store_every) for g, dt in zip(grids, dts)]

    vary_dt = len(set(dts)) > 1
    scales = [float(dt) if vary_dt else 1.0 / min(g) for g, dt in zip(grids, dts)]
    rows = []
    for i in range(n - 1):
        rows.append({'level': i, 'grid': 'x'.join(str(x) for x in grids[i + 1]), 'dt': float(dts[i + 1]),
                     'distance': _series_distance(runs[i], runs[i + 1])})
    table = pd.DataFrame(rows)
    distances = table['distance'].to_numpy()
    orders = [float('nan')]
    for i in range(1, len(distances)):
        if distances[i] > 0 and distances[i - 1] > 0:
            orders.append(math.log(distances[i - 1] / distances[i]) / math.log(scales[i] / scales[i + 1]))
        else:
            orders.append(float('nan'))
    table['order'] = orders
    monotone = bool(np.all(np.diff(distances) < 0) or distances.max() <= 1e-13)
    if not monotone:
        logger.warning(f"Refinement distances are not decreasing: {distances.tolist()}")
    return {'table': table, 'monotone': monotone, 'runs': runs}


# ----------------------------------------------------------------------------------------------
# Initial Reynolds stress

def build_R0(run: SolverRun, z0: Optional[FieldSeries] = None) -> FieldSeries:
    """
    R₀ = P_{≥Λ}(ũ_< ⊗̊ ũ_<) + ũ_< ⊗̊ ũ_≥ + ũ_≥ ⊗̊ ũ + ũ ⊗̊ z₀ + z₀ ⊗̊ ũ + z₀ ⊗̊ z₀
    with ũ_< = P_{<Λ}ũ and ũ_≥ = P_{≥Λ}ũ, at every stored time, on the doubled grid.
    """
    if z0 is not None:
        if len(z0) != len(run.times) or np.abs(z0.times - run.times).max() > 1e-9 * max(run.T, 1.0):
            raise AlignmentError(f"noise series with {len(z0)} times is not aligned with the {len(run.times)} stored times")
        if z0.n_components != VECTOR:
            raise ShapeMismatchError("noise series must hold vector fields")

    lams = run.lambda_values()
    slices = []
    for i in range(len(run.times)):
        u = run.state(i)
        low = project_below(u, lams[i])
        high = u - low
        u_p, low_p, high_p = (_doubled_samples(f) for f in (u, low, high))
        stress = low_mode_stress(u, lams[i])
        stress = stress + _traceless_from_samples(low_p, high_p) + _traceless_from_samples(high_p, u_p)
        if z0 is not None:
            z = SpectralField(resample(z0.slice(i).coeffs, run.grid))
            z_p = _doubled_samples(z)
            stress = (stress + _traceless_from_samples(u_p, z_p) + _traceless_from_samples(z_p, u_p)
                      + _traceless_from_samples(z_p, z_p))
        slices.append(stress)
    return FieldSeries.from_fields(run.times, slices)


def stress_decay_table(R0: FieldSeries, T_star_sweep: Sequence[float]) -> pd.DataFrame:
    """‖R₀‖_{C_{[0,T*]}L¹} for each T*"""
    l1 = np.array([norm(R0.slice(i), 'Lp', p=1.0, oversample=1) for i in range(len(R0))])
    rows = []
    for T_star in sorted(T_star_sweep):
        window = R0.times <= T_star * (1 + 1e-12)
        rows.append({'T_star': float(T_star), 'R0_L1': float(l1[window].max()) if window.any() else 0.0})
    return pd.DataFrame(rows)


def fit_decay_exponent(table: pd.DataFrame) -> float:
    """T*-exponent of the stress table; +inf when R₀ vanishes on the whole sweep"""
    values = table['R0_L1'].to_numpy()
    if np.all(values <= 1e-300):
        return float('inf')
    slope, _ = loglog_fit(table['T_star'].to_numpy(), values, floor=1e-300)
    return slope


def run_summary(run: SolverRun) -> List[Dict[str, float]]:
    """Per-stored-time rows for the solve CSV"""
    balance = energy_balance_residual(run).set_index('t')
    rows = []
    for i, t in enumerate(run.times):
        row = balance.iloc[int(np.argmin(np.abs(balance.index.to_numpy() - t)))]
        rows.append({'t': float(t), 'energy': float(row['energy']),
                     'dissipation_integral': float(row['dissipation_integral']),
                     'balance_residual': float(row['balance_residual'])})
    return rows
