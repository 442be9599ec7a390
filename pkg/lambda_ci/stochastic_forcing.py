#!/usr/bin/env python3
"""
Trace-class Wiener noise and the stochastic convolution z(t) = ∫₀ᵗ e^{ν(t−s)Δ} dW_s.

Each Fourier mode of z is an Ornstein-Uhlenbeck process with decay rate a = 4π²ν|ξ|², sampled
with its exact transition law. Increments are drawn in physical space from a Philox stream keyed
by (seed, path) with the step number in the counter, so a path never depends on which worker
drew it or in which order paths were drawn.
"""

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .config import ToolkitConfig
from .exceptions import PreconditionError, RegressionError
from .spectral_field import (
    VECTOR,
    FieldSeries,
    SpectralField,
    _check_grid,
    from_physical,
    leray_project,
    wavenumber_norm,
    wavenumbers,
)
from .utils import calculate_processing_time, loglog_fit, run_parallel

logger = logging.getLogger(__name__)

NOISE_DEFAULTS = ToolkitConfig.NOISE


@dataclass(frozen=True)
class NoiseSpec:
    """
    Noise covariance and viscosity.

    g(ξ) = amplitude·|ξ|^{−s_g} unless a custom multiplier ξ ↦ g(ξ) is given; the
    multiplier acts after the Leray projection, so each transverse polarization of mode ξ
    carries variance g(ξ)² per unit time.
    """

    grid: tuple = tuple(NOISE_DEFAULTS['grid'])
    nu: float = NOISE_DEFAULTS['nu']
    s_g: float = NOISE_DEFAULTS['s_g']
    amplitude: float = NOISE_DEFAULTS['amplitude']
    seed: int = NOISE_DEFAULTS['seed']
    multiplier: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, 'grid', _check_grid(self.grid))
        if self.nu <= 0:
            raise PreconditionError(f"viscosity must be positive, got {self.nu}")
        if self.multiplier is None and self.s_g <= 1.5:
            raise PreconditionError(f"s_g={self.s_g} does not give a trace-class covariance (need s_g > 3/2)")

    def g(self) -> np.ndarray:
        if self.multiplier is not None:
            values = np.asarray(self.multiplier(wavenumbers(self.grid)), dtype=float)
        else:
            k = wavenumber_norm(self.grid).copy()
            k[0, 0, 0] = 1.0
            values = self.amplitude * k ** -self.s_g
        values = np.broadcast_to(values, self.grid).copy()
        values[0, 0, 0] = 0.0
        return values

    def trace(self) -> float:
        """tr(GG*) = 2 Σ_ξ g(ξ)², two transverse polarizations per mode"""
        return 2.0 * float(np.sum(self.g() ** 2))

    def decay_rate(self) -> np.ndarray:
        return self.nu * (2.0 * np.pi * wavenumber_norm(self.grid)) ** 2

    def variance(self, t) -> np.ndarray:
        """Per-polarization variance g²(1 − e^{−2at})/(2a) of ẑ(t, ξ) started from zero"""
        a = self.decay_rate()
        safe = np.where(a > 0, a, 1.0)
        return np.where(a > 0, self.g() ** 2 * -np.expm1(-2.0 * safe * t) / (2.0 * safe), 0.0)

    def as_dict(self) -> Dict[str, object]:
        return {'grid': list(self.grid), 'nu': self.nu, 's_g': self.s_g, 'amplitude': self.amplitude,
                'seed': self.seed, 'trace': self.trace()}


@dataclass(eq=False)
class ConvolutionPath:
    """One sampled path of z with z(0) = 0"""

    z: FieldSeries
    spec: NoiseSpec
    path: int = 0
    level: Optional[float] = None

    @property
    def times(self) -> np.ndarray:
        return self.z.times

    def __len__(self) -> int:
        return len(self.z)


def _increment_generator(seed: int, path: int, step: int) -> np.random.Generator:
    key = np.array([seed, path], dtype=np.uint64)
    counter = np.array([0, 0, step, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def white_increment(spec: NoiseSpec, path: int, step: int) -> SpectralField:
    """Leray-projected Gaussian field with unit variance per transverse polarization and mode"""
    grid = spec.grid
    rng = _increment_generator(spec.seed, path, step)
    white = rng.standard_normal((VECTOR,) + grid)
    scaled = from_physical(white) * math.sqrt(float(np.prod(grid)))
    return leray_project(scaled)


def _step_sizes(T: float, dt: float) -> np.ndarray:
    if T <= 0 or dt <= 0:
        raise PreconditionError(f"T and dt must be positive, got T={T}, dt={dt}")
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    times = np.minimum(np.arange(n + 1) * dt, T)
    times[-1] = T
    return times


def _iterate(spec: NoiseSpec, times: np.ndarray, path: int):
    """Yield ẑ at every node of `times` from an exact OU transition per step"""
    a = spec.decay_rate()
    g = spec.g()
    safe = np.where(a > 0, a, 1.0)
    z = np.zeros((VECTOR,) + spec.grid, dtype=np.complex128)
    yield z.copy()
    for step in range(1, times.size):
        h = times[step] - times[step - 1]
        variance = np.where(a > 0, -np.expm1(-2.0 * safe * h) / (2.0 * safe), 0.0)
        z = np.exp(-a * h) * z + (g * np.sqrt(variance)) * white_increment(spec, path, step).coeffs
        yield z.copy()


def sample_convolution(spec: NoiseSpec, T: float, dt: float, grid: Optional[Sequence[int]] = None,
                       path: int = 0, times: Optional[Sequence[float]] = None) -> ConvolutionPath:
    """
    Sample z on [0, T] with steps of dt (the last step may be shorter), or on explicit times
    starting at 0.
    """
    if grid is not None and _check_grid(grid) != spec.grid:
        spec = replace(spec, grid=_check_grid(grid))
    if times is None:
        times = _step_sizes(T, dt)
    else:
        times = np.asarray(times, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise PreconditionError("explicit noise times must start at 0 and increase strictly")
    slices = np.stack(list(_iterate(spec, times, path)))
    return ConvolutionPath(z=FieldSeries(times, slices), spec=spec, path=path)


def truncation_level(lam: float, eps: float) -> float:
    """λ^{ε/8}, the frequency cutoff of the noise at the level with frequency λ"""
    return float(lam) ** (eps / 8.0)


def truncate_noise(path: ConvolutionPath, level: float) -> ConvolutionPath:
    """z_q = P_{≤level} z, sharp, slice by slice"""
    if level <= 0:
        raise PreconditionError(f"noise cutoff must be positive, got {level}")
    keep = wavenumber_norm(path.z.grid_dims) <= level
    truncated = FieldSeries(path.z.times, path.z.coeffs * keep)
    return ConvolutionPath(z=truncated, spec=path.spec, path=path.path, level=float(level))


def _path_statistics(spec: NoiseSpec, times: np.ndarray, path: int, T_sweep: Sequence[float],
                     delta: float) -> Dict[str, np.ndarray]:
    """sup-in-time norms of one path over each window [0, T]"""
    coeffs = np.stack(list(_iterate(spec, times, path)))
    flat = coeffs.reshape(coeffs.shape[0], -1)
    l2 = np.sqrt(np.sum(np.abs(flat) ** 2, axis=1))
    weight = (1.0 + wavenumber_norm(spec.grid) ** 2) ** (1.0 - delta)
    hs = np.sqrt(np.sum(weight * np.abs(coeffs) ** 2, axis=(1, 2, 3, 4)))

    gram = np.real(flat @ flat.conj().T)
    dist2 = np.maximum(l2[:, None] ** 2 + l2[None, :] ** 2 - 2.0 * gram, 0.0)
    gaps = np.abs(times[:, None] - times[None, :])
    with np.errstate(divide='ignore', invalid='ignore'):
        quotient = np.where(gaps > 0, np.sqrt(dist2) / gaps ** (0.5 - delta), 0.0)

    out = {'l2': [], 'hs': [], 'holder': []}
    for T in T_sweep:
        window = times <= T * (1 + 1e-12)
        out['l2'].append(l2[window].max())
        out['hs'].append(hs[window].max())
        out['holder'].append(quotient[np.ix_(window, window)].max())
    return {key: np.array(values) for key, values in out.items()}


def moment_report(spec: NoiseSpec, n_samples: int = NOISE_DEFAULTS['n_samples'],
                  p_list: Sequence[float] = NOISE_DEFAULTS['p_list'], delta: float = NOISE_DEFAULTS['delta'],
                  T_sweep: Sequence[float] = NOISE_DEFAULTS['T_sweep'], dt: float = NOISE_DEFAULTS['dt'],
                  threads: Optional[int] = None) -> Dict[str, object]:
    """
    Monte-Carlo moments of z.

    For every p and T the table holds (E‖z‖^p_{C_T L²})^{1/p}; its T-exponent is fitted on the
    p-th moment and compared with (1−δ)p/2. The empirical L is the smallest constant with
    E(‖z‖^p_{C_T H^{1−δ}} + ‖z‖^p_{C_T^{1/2−δ}L²}) ≤ (p−1)^{p/2}L^p over the p > 1 in p_list,
    at the largest T.
    """
    if n_samples < 100:
        raise PreconditionError(f"moment estimates need at least 100 samples, got {n_samples}")
    if not 0 < delta < 0.5:
        raise PreconditionError(f"delta must lie in (0, 1/2), got {delta}")
    T_sweep = sorted(float(T) for T in T_sweep)
    times = _step_sizes(T_sweep[-1], dt)
    times = np.unique(np.concatenate([times, T_sweep]))

    logger.info(f"Sampling {n_samples} noise paths on {spec.grid} up to T={T_sweep[-1]} "
                f"({times.size - 1} steps, trace {spec.trace():.4e})")
    start = time.time()
    stats = run_parallel(lambda path: _path_statistics(spec, times, path, T_sweep, delta),
                         range(n_samples), threads)
    l2 = np.stack([s['l2'] for s in stats])
    hs = np.stack([s['hs'] for s in stats])
    holder = np.stack([s['holder'] for s in stats])
    logger.info(f"Noise sampling finished in {calculate_processing_time(start)}")

    rows, holder_rows = [], []
    L = 0.0
    for p in p_list:
        pth = np.mean(l2 ** p, axis=0)
        try:
            fitted, _ = loglog_fit(T_sweep, pth, floor=1e-300)
        except RegressionError:
            fitted = float('nan')
        predicted_exponent = (1.0 - delta) * p / 2.0
        scale = pth / np.power(T_sweep, predicted_exponent)
        constant = float(scale.max()) if pth.any() else 0.0
        for j, T in enumerate(T_sweep):
            rows.append({
                'p': p, 'delta': delta, 'T': T,
                'empirical_moment': float(pth[j] ** (1.0 / p)),
                'predicted_bound': float((constant * T ** predicted_exponent) ** (1.0 / p)),
                'fitted_exponent': fitted,
                'predicted_exponent': predicted_exponent,
            })
            holder_rows.append({'p': p, 'T': T, 'holder_moment': float(np.mean(holder[:, j] ** p) ** (1.0 / p)),
                                'hs_moment': float(np.mean(hs[:, j] ** p) ** (1.0 / p))})
        if p > 1:
            joint = float(np.mean(hs[:, -1] ** p + holder[:, -1] ** p))
            L = max(L, joint ** (1.0 / p) / math.sqrt(p - 1.0))

    return {
        'table': pd.DataFrame(rows),
        'holder': pd.DataFrame(holder_rows),
        'L': L,
        'trace': spec.trace(),
        'n_samples': n_samples,
    }


def moments_monotone(table: pd.DataFrame) -> bool:
    """(E X^p)^{1/p} is nondecreasing in p at every T"""
    for _, group in table.groupby('T'):
        values = group.sort_values('p')['empirical_moment'].to_numpy()
        if np.any(np.diff(values) < -1e-12 * max(1.0, values.max())):
            return False
    return True


def noise_series(spec: NoiseSpec, times: Sequence[float], path: int = 0,
                 level: Optional[float] = None) -> FieldSeries:
    """z (or z_q when level is given) on the given times, for forcing-aware diagnostics"""
    sampled = sample_convolution(spec, T=float(times[-1]), dt=float(times[-1]), times=times, path=path)
    if level is not None:
        sampled = truncate_noise(sampled, level)
    return sampled.z
