#!/usr/bin/env python3
"""
Intermittent jets, their incompressibility correctors and the scaling checks around them.

A jet along the frame (k, k₁, k₂) is

    W_(k)(x, t) = ψ_{r∥}(s(k₁·x + μt)) φ_{r⊥}(s k·(x−α), s k₂·(x−α)) k₁,   s = σN_Λ,

with ψ_{r∥}(y) = r∥^{-1/2}ψ(y/r∥) and φ_{r⊥}(y) = r⊥^{-1}φ(y/r⊥) periodized. Since sk, sk₁, sk₂
are integer vectors the jet lives on the lattice ξ = s(n k₁ + m₁k + m₂k₂), and every Fourier
coefficient factors as

    S(ξ) = r∥^{1/2} ψ̂(r∥n) e^{2πi n sμ t} · r⊥ Φ̂(r⊥m) e^{-2πi s(m₁k + m₂k₂)·α}.

With κ = s/r⊥ the three fields are

    Ŵ   = 4π² r⊥² |m|² S k₁
    Ŵ^c = κ^{-2} S (2πiξ_⊥ × k₁)
    W̃^c = κ^{-2} S (2πiξ_∥) × (2πiξ_⊥ × k₁)

so that W + W̃^c = curl W^c holds mode by mode, also on a truncated lattice.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from .config import ToolkitConfig
from .exceptions import DisjointnessError, PreconditionError, ResolutionError
from .geometry import Frame, WaveVectorSet, build_wavevector_set
from .spectral_field import (
    SpectralField,
    _check_grid,
    curl,
    divergence,
    gradient,
    norm,
    represented_modes,
    wavenumbers,
)
from .utils import loglog_fit

logger = logging.getLogger(__name__)

# λ-exponents of the standard parameter tuple
SIGMA_EXP = 1.0 / 7.0
R_PAR_EXP = -4.0 / 7.0
R_PERP_EXP = -6.0 / 7.0
MU_EXP = 9.0 / 7.0

PHI_HALF_WIDTH = 1.0 / (8.0 * math.sqrt(2.0))   # square support inside the radius-1/8 disc
PSI_HALF_WIDTH = 1.0 / 8.0                      # support [3/8, 5/8]
PROFILE_CENTER = 0.5
JET_MODES = ('formal', 'desk', 'strict')


def bump(t) -> np.ndarray:
    """exp(−1/(1−t²)) on (−1, 1), zero outside"""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    q = np.where(inside, 1.0 - t ** 2, 1.0)
    return np.where(inside, np.exp(-1.0 / q), 0.0)


def bump_d1(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    q = np.where(inside, 1.0 - t ** 2, 1.0)
    return np.where(inside, bump(t) * (-2.0 * t / q ** 2), 0.0)


def bump_d2(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    q = np.where(inside, 1.0 - t ** 2, 1.0)
    factor = 4.0 * t ** 2 / q ** 4 - 2.0 / q ** 2 - 8.0 * t ** 2 / q ** 3
    return np.where(inside, bump(t) * factor, 0.0)


def _trapezoid_transform(samples: np.ndarray, nodes: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """(1/R) Σ_j f(y_j) e^{−2πiωy_j} at arbitrary real ω, over the nonzero samples"""
    omega = np.asarray(omega, dtype=float)
    unique, inverse = np.unique(omega.ravel(), return_inverse=True)
    keep = samples != 0
    y, f = nodes[keep], samples[keep]
    values = np.exp(-2j * np.pi * unique[:, None] * y[None, :]) @ f / samples.size
    return values[inverse].reshape(omega.shape)


@dataclass(frozen=True, eq=False)
class JetProfiles:
    """
    The profiles Φ, φ = −ΔΦ and ψ, stored as closed forms with normalizing constants
    plus high-resolution samples.

    Φ(y) = C_Φ B(y₁)B(y₂) with B a bump of half-width 1/(8√2) centred at ½, so supp Φ lies in
    the disc of radius 1/8 around (½, ½). ψ = C_ψ b′((x−½)·8) is supported in [3/8, 5/8].
    """

    resolution: int
    transverse_resolution: int
    c_phi: float
    c_psi: float
    nodes: np.ndarray
    B_samples: np.ndarray
    psi_samples: np.ndarray

    def B(self, y) -> np.ndarray:
        return bump((np.asarray(y, dtype=float) - PROFILE_CENTER) / PHI_HALF_WIDTH)

    def B_d2(self, y) -> np.ndarray:
        return bump_d2((np.asarray(y, dtype=float) - PROFILE_CENTER) / PHI_HALF_WIDTH) / PHI_HALF_WIDTH ** 2

    def Phi(self, y1, y2) -> np.ndarray:
        return self.c_phi * self.B(y1) * self.B(y2)

    def phi(self, y1, y2) -> np.ndarray:
        return -self.c_phi * (self.B_d2(y1) * self.B(y2) + self.B(y1) * self.B_d2(y2))

    def psi(self, x) -> np.ndarray:
        return self.c_psi * bump_d1((np.asarray(x, dtype=float) - PROFILE_CENTER) / PSI_HALF_WIDTH)

    def psi_scaled(self, y, r_par: float) -> np.ndarray:
        """Periodized r∥^{-1/2} ψ(y/r∥)"""
        return r_par ** -0.5 * self.psi(np.mod(y, 1.0) / r_par)

    def phi_scaled(self, y1, y2, r_perp: float) -> np.ndarray:
        """Periodized r⊥^{-1} φ(y/r⊥)"""
        return self.phi(np.mod(y1, 1.0) / r_perp, np.mod(y2, 1.0) / r_perp) / r_perp

    def psi_hat(self, omega) -> np.ndarray:
        """∫ψ(y)e^{−2πiωy}dy"""
        return _trapezoid_transform(self.psi_samples, self.nodes, omega)

    def B_hat(self, omega) -> np.ndarray:
        return _trapezoid_transform(self.B_samples, self.nodes, omega)

    def Phi_hat(self, omega1, omega2) -> np.ndarray:
        return self.c_phi * self.B_hat(omega1) * self.B_hat(omega2)

    def psi_derivative_samples(self, order: int) -> np.ndarray:
        """ψ^{(order)} on the profile grid, by spectral differentiation"""
        coeffs = sfft.fft(self.psi_samples, norm='forward')
        n = sfft.fftfreq(self.resolution, d=1.0 / self.resolution)
        return sfft.ifft((2j * np.pi * n) ** order * coeffs, norm='forward').real

    def psi_norm(self, order: int = 0, p: float = 2.0) -> float:
        values = np.abs(self.psi_derivative_samples(order))
        if np.isinf(p):
            return float(values.max())
        return float(np.mean(values ** p) ** (1.0 / p))

    def phi_gradient_norm(self, order: int = 0) -> float:
        """‖D^order φ‖_{L²(R²)} from the separable Fourier series of Φ"""
        coeffs = sfft.fft(self.B_samples, norm='forward')
        m2 = sfft.fftfreq(self.resolution, d=1.0 / self.resolution) ** 2
        power = np.abs(coeffs) ** 2
        q = order + 2
        moments = [float((m2 ** i * power).sum()) for i in range(q + 1)]
        total = sum(math.comb(q, i) * moments[i] * moments[q - i] for i in range(q + 1))
        return float(np.sqrt((2.0 * np.pi) ** (2 * order) * (4.0 * np.pi ** 2) ** 2 * self.c_phi ** 2 * total))

    def phi_norm(self, p: float = 2.0) -> float:
        """‖φ‖_{L^p} on the transverse sample grid"""
        y = np.arange(self.transverse_resolution) / self.transverse_resolution
        B, B2 = self.B(y), self.B_d2(y)
        values = np.abs(-self.c_phi * (np.outer(B2, B) + np.outer(B, B2)))
        if np.isinf(p):
            return float(values.max())
        return float(np.mean(values ** p) ** (1.0 / p))


def build_profiles(resolution: Optional[int] = None, transverse_resolution: Optional[int] = None) -> JetProfiles:
    """Build normalized jet profiles: ∫φ² = 1, ∫ψ² = 1, ∫ψ = 0"""
    resolution = resolution or ToolkitConfig.JETS['profile_resolution']
    transverse_resolution = transverse_resolution or ToolkitConfig.JETS['transverse_resolution']
    if resolution < 2 ** 10 or resolution % 2:
        raise PreconditionError(f"profile resolution must be an even number ≥ 2^10, got {resolution}")

    y = np.arange(resolution) / resolution
    s = (y - PROFILE_CENTER) / PHI_HALF_WIDTH
    B = bump(s)
    B2 = bump_d2(s) / PHI_HALF_WIDTH ** 2
    # ∫φ² = C²(2∫B″²∫B² + 2(∫B″B)²)
    phi_sq = 2.0 * np.mean(B2 ** 2) * np.mean(B ** 2) + 2.0 * np.mean(B2 * B) ** 2
    c_phi = 1.0 / math.sqrt(phi_sq)

    raw_psi = bump_d1((y - PROFILE_CENTER) / PSI_HALF_WIDTH)
    c_psi = 1.0 / math.sqrt(np.mean(raw_psi ** 2))

    for array in (y, B):
        array.setflags(write=False)
    psi_samples = c_psi * raw_psi
    psi_samples.setflags(write=False)

    logger.debug(f"Built jet profiles at resolution {resolution}: C_Φ={c_phi:.6e}, C_ψ={c_psi:.6e}")
    return JetProfiles(
        resolution=resolution, transverse_resolution=transverse_resolution,
        c_phi=c_phi, c_psi=c_psi, nodes=y, B_samples=B, psi_samples=psi_samples,
    )


@dataclass(frozen=True, eq=False)
class JetParams:
    """(λ, r⊥, r∥, μ, σ) plus the shifts α_k of one jet generation"""

    lam: float
    r_perp: float
    r_par: float
    mu: float
    sigma: float
    mode: str = 'desk'
    n_lambda: int = 5
    shifts: np.ndarray = field(default_factory=lambda: np.zeros((6, 3)))

    def __post_init__(self):
        if self.mode not in JET_MODES:
            raise PreconditionError(f"unknown jet mode '{self.mode}', expected one of {JET_MODES}")
        if not 0 < self.r_perp <= self.r_par < 1:
            raise PreconditionError(f"need 0 < r⊥ ≤ r∥ < 1, got r⊥={self.r_perp}, r∥={self.r_par}")
        if self.mode != 'formal' and abs(self.sigma - round(self.sigma)) > 1e-9:
            raise PreconditionError(f"σ={self.sigma} must be an integer so that σN_Λ k₁ ∈ Z³")
        object.__setattr__(self, 'shifts', np.asarray(self.shifts, dtype=float))

    @classmethod
    def from_lambda(cls, lam: float, mode: str = 'desk', wave_set: Optional[WaveVectorSet] = None,
                    choose: bool = True, strict_shifts: bool = True, sigma_factor: float = 1.0) -> 'JetParams':
        """
        Standard tuple r∥ = λ^{-4/7}, r⊥ = λ^{-6/7}, μ = λ^{9/7}, σ = λ^{1/7}.

        'formal' keeps σ real (separable sweeps only), 'desk' rounds c_σλ^{1/7} to the nearest
        positive integer, c_σ = sigma_factor, and 'strict' requires λ^{1/7} to be an integer already.

        Over λ ∈ [8, 64], c_σ = 1 rounds to σ = 1, 1, 2, 2, a σ-slope of about 1/3; c_σ = 1.5 gives
        2, 2, 2, 3, whose slope stays near 1/7.
        """
        if lam <= 1:
            raise PreconditionError(f"λ must exceed 1, got {lam}")
        if sigma_factor <= 0:
            raise PreconditionError(f"σ prefactor must be positive, got {sigma_factor}")
        wave_set = wave_set or build_wavevector_set()
        sigma = lam ** SIGMA_EXP
        if mode == 'desk':
            sigma = float(max(1, round(sigma_factor * sigma)))
        elif mode == 'strict':
            if abs(sigma - round(sigma)) > 1e-9 * sigma:
                raise PreconditionError(f"strict jets need λ^(1/7) ∈ N, got λ^(1/7)={sigma:.6f}")
            sigma = float(round(sigma))
        params = cls(lam=float(lam), r_perp=lam ** R_PERP_EXP, r_par=lam ** R_PAR_EXP, mu=lam ** MU_EXP,
                     sigma=sigma, mode=mode, n_lambda=wave_set.n_lambda,
                     shifts=np.zeros((len(wave_set), 3)))
        if choose and mode != 'formal':
            params = params.with_shifts(choose_shifts(params, wave_set, strict=strict_shifts))
        return params

    def with_shifts(self, shifts: np.ndarray) -> 'JetParams':
        return JetParams(lam=self.lam, r_perp=self.r_perp, r_par=self.r_par, mu=self.mu, sigma=self.sigma,
                         mode=self.mode, n_lambda=self.n_lambda, shifts=np.asarray(shifts, dtype=float))

    @property
    def s(self) -> float:
        """σN_Λ"""
        return self.sigma * self.n_lambda

    @property
    def kappa(self) -> float:
        """s/r⊥, the transverse frequency (equals N_Λλ for the formal tuple)"""
        return self.s / self.r_perp

    @property
    def time_frequency(self) -> float:
        """sμ: time frequency of the phase e^{2πi n sμ t}"""
        return self.s * self.mu

    def as_dict(self) -> Dict[str, float]:
        return {'lambda': self.lam, 'r_perp': self.r_perp, 'r_par': self.r_par, 'mu': self.mu,
                'sigma': self.sigma, 's': self.s, 'kappa': self.kappa, 'mode': self.mode}


# --------------------------------------------------------------------------- shifts

def _annihilator(columns: Sequence[Sequence[int]]) -> np.ndarray:
    """Primitive integer ℓ ∈ Z⁴ with Σ ℓ_i c_i = 0 for four integer vectors c_i ∈ Z³"""
    M = np.array(columns, dtype=np.int64).T  # 3×4
    ell = []
    for i in range(4):
        minor = np.delete(M, i, axis=1)
        ell.append((-1) ** i * int(round(np.linalg.det(minor.astype(float)))))
    ell = np.array(ell, dtype=np.int64)
    g = math.gcd(*[int(abs(x)) for x in ell])
    if g == 0:
        raise DisjointnessError("parallel jet directions have no separating covector")
    return ell // g


def _pair_data(a: Frame, b: Frame) -> Tuple[np.ndarray, float]:
    ell = _annihilator([a.k_int, a.k2_int, b.k_int, b.k2_int])
    spread = float(np.hypot(ell[0], ell[1]) + np.hypot(ell[2], ell[3]))
    return ell, spread


def _transverse_center(frame: Frame, beta: np.ndarray, r_perp: float) -> np.ndarray:
    """Tube centre (Kβ, K₂β) + (r⊥/2, r⊥/2) in the frame's transverse torus"""
    return np.array([np.dot(frame.k_int, beta), np.dot(frame.k2_int, beta)]) + 0.5 * r_perp


def _slack(ell: np.ndarray, spread: float, center_a: np.ndarray, center_b: np.ndarray, radius: float) -> float:
    offset = float(np.dot(ell, np.concatenate([center_a, center_b])))
    distance = abs(offset - round(offset))
    return distance - radius * spread


def choose_shifts(params: JetParams, wave_set: WaveVectorSet, strict: bool = True,
                  lattice: Optional[int] = None) -> np.ndarray:
    """
    Greedy tube placement on the coarse lattice α = β/σ, β ∈ (1/L)Z³.

    Two tube families meet iff some point of T⁴ with ℓ·y ∈ Z lies in both discs, where ℓ
    annihilates (K, K₂, K′, K₂′). That reduces to dist(ℓ·(c, c′), Z) > ρ(|ℓ₁₂| + |ℓ₃₄|) with
    ρ = r⊥/8. Directions are processed in sorted order, so the result does not depend on how
    the set is ordered. With strict=False an infeasible packing keeps the best slack found.
    """
    lattice = lattice or ToolkitConfig.JETS['shift_lattice']
    radius = params.r_perp / 8.0
    frames = list(wave_set.entries)
    order = sorted(range(len(frames)), key=lambda i: frames[i].k_int)
    grid = np.arange(lattice) / lattice
    candidates = np.stack(np.meshgrid(grid, grid, grid, indexing='ij'), axis=-1).reshape(-1, 3)

    betas: Dict[int, np.ndarray] = {}
    worst_slack = np.inf
    for i in order:
        if not betas:
            betas[i] = np.zeros(3)
            continue
        scores = np.full(len(candidates), np.inf)
        for j, beta_j in betas.items():
            ell, spread = _pair_data(frames[i], frames[j])
            center_j = _transverse_center(frames[j], beta_j, params.r_perp)
            offsets = np.array([
                _slack(ell, spread, _transverse_center(frames[i], beta, params.r_perp), center_j, radius)
                for beta in candidates
            ])
            scores = np.minimum(scores, offsets)
        best = int(np.argmax(scores))
        if scores[best] <= 0:
            message = (f"cannot separate jet {frames[i].k_int} at r⊥={params.r_perp:.4g}: "
                       f"best slack {scores[best]:.4g}")
            if strict:
                raise DisjointnessError(message)
            logger.warning(message + "; keeping the least-overlapping placement")
        worst_slack = min(worst_slack, float(scores[best]))
        betas[i] = candidates[best]

    logger.debug(f"Chose jet shifts with minimal slack {worst_slack:.4g}")
    return np.stack([betas[i] for i in range(len(frames))]) / params.sigma


def shift_slack(params: JetParams, wave_set: WaveVectorSet) -> float:
    """Smallest pairwise separation margin of the placed tubes; positive means disjoint"""
    frames = wave_set.entries
    betas = params.shifts * params.sigma
    worst = np.inf
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            ell, spread = _pair_data(frames[i], frames[j])
            worst = min(worst, _slack(ell, spread, _transverse_center(frames[i], betas[i], params.r_perp),
                                      _transverse_center(frames[j], betas[j], params.r_perp), params.r_perp / 8.0))
    return float(worst)


def support_masks(params: JetParams, wave_set: WaveVectorSet, grid: Sequence[int]) -> np.ndarray:
    """Boolean (directions, N0, N1, N2) masks of the closed jet tubes at the grid points"""
    grid = _check_grid(grid)
    x = np.stack(np.meshgrid(*[np.arange(n) / n for n in grid], indexing='ij'))
    radius = params.r_perp / 8.0
    masks = []
    for frame, alpha in zip(wave_set.entries, params.shifts):
        shifted = x - alpha[:, None, None, None]
        y1 = np.mod(params.sigma * np.tensordot(frame.k_int, shifted, axes=1) - 0.5 * params.r_perp + 0.5, 1.0) - 0.5
        y2 = np.mod(params.sigma * np.tensordot(frame.k2_int, shifted, axes=1) - 0.5 * params.r_perp + 0.5, 1.0) - 0.5
        masks.append(np.hypot(y1, y2) <= radius)
    return np.stack(masks)


def support_overlap(params: JetParams, wave_set: WaveVectorSet, grid: Sequence[int]) -> np.ndarray:
    """Pairwise counts of grid points lying in two tubes"""
    masks = support_masks(params, wave_set, grid).reshape(len(wave_set), -1).astype(np.int64)
    overlap = masks @ masks.T
    np.fill_diagonal(overlap, 0)
    return overlap


# --------------------------------------------------------------------------- jets

@dataclass(frozen=True, eq=False)
class JetDescriptor:
    """Separable form of one jet: ψ factor along sk₁, φ factor across, direction k₁"""

    k_index: int
    k1: np.ndarray
    parallel: np.ndarray        # σK₁ (integer)
    transverse: np.ndarray      # rows σK, σK₂ (integer)
    shift: np.ndarray
    time_frequency: float
    psi_factor: Callable[[np.ndarray], np.ndarray]
    phi_factor: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def sample(self, x: np.ndarray, t: float) -> np.ndarray:
        """Scalar ψφ at points x of shape (3, ...)"""
        y_par = np.tensordot(self.parallel, x, axes=1) + self.time_frequency * t
        shifted = x - self.shift.reshape((3,) + (1,) * (x.ndim - 1))
        y1 = np.tensordot(self.transverse[0], shifted, axes=1)
        y2 = np.tensordot(self.transverse[1], shifted, axes=1)
        return self.psi_factor(y_par) * self.phi_factor(y1, y2)


def jet_descriptor(k_index: int, params: JetParams, profiles: JetProfiles,
                   wave_set: Optional[WaveVectorSet] = None) -> JetDescriptor:
    wave_set = wave_set or build_wavevector_set()
    frame = wave_set.entries[k_index]
    sigma = params.sigma
    return JetDescriptor(
        k_index=k_index,
        k1=frame.k1.copy(),
        parallel=sigma * np.array(frame.k1_int, dtype=float),
        transverse=sigma * np.array([frame.k_int, frame.k2_int], dtype=float),
        shift=params.shifts[k_index].copy(),
        time_frequency=params.time_frequency,
        psi_factor=lambda y: profiles.psi_scaled(y, params.r_par),
        phi_factor=lambda y1, y2: profiles.phi_scaled(y1, y2, params.r_perp),
    )


def sample_physical(k_index: int, params: JetParams, profiles: JetProfiles, t: float,
                    grid: Sequence[int], wave_set: Optional[WaveVectorSet] = None) -> np.ndarray:
    """Closed-form jet samples, shape (3, N0, N1, N2)"""
    grid = _check_grid(grid)
    descriptor = jet_descriptor(k_index, params, profiles, wave_set)
    x = np.stack(np.meshgrid(*[np.arange(n) / n for n in grid], indexing='ij'))
    scalar = descriptor.sample(x, t)
    return descriptor.k1[:, None, None, None] * scalar[None]


def separable_grid_norm(params: JetParams, profiles: JetProfiles, n: int) -> float:
    """‖ψ_{r∥}‖ · ‖φ_{r⊥}‖ by n-point (1D) and n²-point (2D) trapezoid rules"""
    y = np.arange(n) / n
    psi = profiles.psi_scaled(y, params.r_par)
    y1, y2 = np.meshgrid(y, y, indexing='ij')
    phi = profiles.phi_scaled(y1, y2, params.r_perp)
    return float(np.sqrt(np.mean(psi ** 2) * np.mean(phi ** 2)))


class JetFamily:
    """
    Spectral jets of one generation on a grid.

    Only lattice modes inside the grid are kept. Unless allow_truncation is set, the grid must
    represent the transverse frequency κ = σN_Λ/r⊥.
    """

    def __init__(self, params: JetParams, profiles: JetProfiles, grid: Sequence[int],
                 wave_set: Optional[WaveVectorSet] = None, allow_truncation: bool = False):
        if params.mode == 'formal':
            raise PreconditionError("formal jets have no lattice; use desk or strict mode")
        self.params = params
        self.profiles = profiles
        self.grid = _check_grid(grid)
        self.wave_set = wave_set or build_wavevector_set()
        self.allow_truncation = allow_truncation

        resolvable = min(self.grid) // 2 - 1
        self.truncated = params.kappa > resolvable
        if self.truncated:
            required = 2 * (math.ceil(params.kappa) + 1)
            if not allow_truncation:
                raise ResolutionError(
                    f"grid {self.grid} does not resolve κ=σN_Λ/r⊥={params.kappa:.2f}; "
                    f"need at least {required} points per axis"
                )
            logger.debug(f"Jet lattice truncated: κ={params.kappa:.2f} beyond {resolvable}")

        self._modes = [self._build_modes(i) for i in range(len(self.wave_set))]

    def _build_modes(self, k_index: int) -> Dict[str, np.ndarray]:
        p = self.params
        frame = self.wave_set.entries[k_index]
        sigma = int(round(p.sigma))
        divisor = sigma * p.n_lambda * p.n_lambda
        xi = wavenumbers(self.grid)
        dots = [np.tensordot(np.array(v, dtype=np.int64), xi, axes=1) for v in (frame.k1_int, frame.k_int, frame.k2_int)]
        lattice = (dots[0] % divisor == 0) & (dots[1] % divisor == 0) & (dots[2] % divisor == 0)
        lattice &= represented_modes(self.grid)
        index = np.nonzero(lattice)
        n, m1, m2 = (d[index] // divisor for d in dots)

        xi_vec = xi[(slice(None),) + index].astype(float)
        xi_par = p.s * n[None, :] * frame.k1[:, None]
        xi_perp = xi_vec - xi_par

        alpha = p.shifts[k_index]
        phase = np.exp(-2j * np.pi * sigma * (m1 * np.dot(frame.k_int, alpha) + m2 * np.dot(frame.k2_int, alpha)))
        static = (np.sqrt(p.r_par) * self.profiles.psi_hat(p.r_par * n)
                  * p.r_perp * self.profiles.Phi_hat(p.r_perp * m1, p.r_perp * m2) * phase)
        return {
            'index': index, 'n': n, 'm_sq': (m1 ** 2 + m2 ** 2).astype(float),
            'xi_par': xi_par, 'xi_perp': xi_perp, 'static': static, 'k1': frame.k1,
        }

    def __len__(self) -> int:
        return len(self._modes)

    def n_modes(self, k_index: int) -> int:
        return int(self._modes[k_index]['n'].size)

    def max_parallel_mode(self) -> int:
        return int(max((np.abs(m['n']).max() if m['n'].size else 0) for m in self._modes))

    def _coefficient(self, k_index: int, t: float, time_derivative: int = 0) -> Tuple[Dict, np.ndarray]:
        modes = self._modes[k_index]
        omega = 2.0 * np.pi * modes['n'] * self.params.time_frequency
        value = modes['static'] * np.exp(1j * omega * t)
        if time_derivative:
            value = value * (1j * omega) ** time_derivative
        return modes, value

    def _assemble(self, modes: Dict, vectors: np.ndarray) -> SpectralField:
        coeffs = np.zeros((3,) + self.grid, dtype=np.complex128)
        for c in range(3):
            coeffs[(c,) + modes['index']] = vectors[c]
        return SpectralField(coeffs)

    def jet(self, k_index: int, t: float, time_derivative: int = 0) -> SpectralField:
        """W_(k)(·, t), or its time derivative of the given order"""
        modes, S = self._coefficient(k_index, t, time_derivative)
        scalar = 4.0 * np.pi ** 2 * self.params.r_perp ** 2 * modes['m_sq'] * S
        return self._assemble(modes, modes['k1'][:, None] * scalar[None, :])

    def correctors(self, k_index: int, t: float, time_derivative: int = 0) -> Tuple[SpectralField, SpectralField]:
        """(W^c_(k), W̃^c_(k)) with W + W̃^c = curl W^c"""
        modes, S = self._coefficient(k_index, t, time_derivative)
        scale = S / self.params.kappa ** 2
        k1 = np.broadcast_to(modes['k1'][:, None], modes['xi_perp'].shape)
        transverse = np.cross(2j * np.pi * modes['xi_perp'], k1, axis=0)
        w_c = transverse * scale[None, :]
        w_tilde = np.cross(2j * np.pi * modes['xi_par'], transverse, axis=0) * scale[None, :]
        return self._assemble(modes, w_c), self._assemble(modes, w_tilde)

    def corrector_identity_residual(self, k_index: int, t: float) -> Dict[str, float]:
        W = self.jet(k_index, t)
        w_c, w_tilde = self.correctors(k_index, t)
        corrected = W + w_tilde
        return {
            'k_index': k_index,
            'curl_residual': (curl(w_c) - corrected).max_abs(),
            'divergence': divergence(corrected).max_abs(),
            'corrector_ratio': norm(w_tilde, 'Hs') / max(norm(W, 'Hs'), 1e-300),
        }


# --------------------------------------------------------------------------- verification sweeps

def predicted_jet_exponent(p: float, N: int, M: int) -> float:
    """λ-exponent of r⊥^{2/p−1} r∥^{1/p−1/2} λ^N (σμ r∥^{-1})^M for the standard tuple"""
    return ((2.0 / p - 1.0) * R_PERP_EXP + (1.0 / p - 0.5) * R_PAR_EXP + N
            + M * (SIGMA_EXP + MU_EXP - R_PAR_EXP))


def separable_jet_norm(params: JetParams, profiles: JetProfiles, p: float = 2.0, N: int = 0, M: int = 0) -> float:
    """
    ‖∇^N ∂_t^M W_(k)‖_{L^p(T³)} from the 1D and 2D profile norms.

    For p = 2 any N is supported through
    s^{2N}(sμ)^{2M} Σ_j C(N,j) r∥^{-2(j+M)}‖ψ^{(j+M)}‖² r⊥^{-2(N−j)}‖D^{N−j}φ‖².
    For p ≠ 2 only N = 0.
    """
    s, r_par, r_perp = params.s, params.r_par, params.r_perp
    if p == 2.0:
        total = 0.0
        for j in range(N + 1):
            total += (math.comb(N, j) * r_par ** (-2 * (j + M)) * profiles.psi_norm(j + M) ** 2
                      * r_perp ** (-2 * (N - j)) * profiles.phi_gradient_norm(N - j) ** 2)
        return float(s ** N * (s * params.mu) ** M * np.sqrt(total))
    if N != 0:
        raise PreconditionError("separable L^p norms with p ≠ 2 are available for N = 0 only")
    psi_part = r_par ** (1.0 / p - 0.5 - M) * profiles.psi_norm(M, p)
    phi_part = r_perp ** (2.0 / p - 1.0) * profiles.phi_norm(p)
    return float((s * params.mu) ** M * psi_part * phi_part)


def verify_jet_scalings(p: float, N: int, M: int, lambda_sweep: Sequence[float],
                        profiles: Optional[JetProfiles] = None) -> Dict:
    """Fit the λ-exponent of the separable jet norms against the predicted exponent"""
    if len(lambda_sweep) < 4:
        raise PreconditionError(f"scaling sweep needs at least 4 λ values, got {len(lambda_sweep)}")
    profiles = profiles or build_profiles()
    measured = []
    for lam in lambda_sweep:
        params = JetParams.from_lambda(lam, mode='formal', choose=False)
        measured.append(separable_jet_norm(params, profiles, p, N, M))
    slope, _ = loglog_fit(lambda_sweep, measured)
    predicted = predicted_jet_exponent(p, N, M)
    rows = [{'suite': 'scalings', 'point': f"p={p},N={N},M={M},lambda={lam:g}", 'measured': value,
             'predicted': np.nan, 'residual': np.nan} for lam, value in zip(lambda_sweep, measured)]
    rows.append({'suite': 'scalings', 'point': f"p={p},N={N},M={M},fit", 'measured': slope,
                 'predicted': predicted, 'residual': abs(slope - predicted)})
    logger.info(f"Jet scaling p={p}, N={N}, M={M}: fitted {slope:.4f}, predicted {predicted:.4f}")
    return {'p': p, 'N': N, 'M': M, 'lambda': list(lambda_sweep), 'measured': measured,
            'fitted_exponent': slope, 'predicted_exponent': predicted, 'rows': rows}


def _fit_or_vanishing(x: Sequence[float], y: Sequence[float], floor: float) -> float:
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    keep = y > floor
    if keep.sum() < 2:
        return float('-inf')
    slope, _ = loglog_fit(x[keep], y[keep])
    return slope


def verify_decorrelation(f: Callable[[np.ndarray], np.ndarray], g: Callable[[np.ndarray], np.ndarray],
                         sigma_sweep: Sequence[int], p: float = 2.0, resolution: int = 2 ** 14,
                         floor: float = 1e-13) -> Dict:
    """
    |‖f g(σ·)‖_{L^p} − ‖f‖_{L^p}‖g‖_{L^p}| over integer σ on T.

    Gaps below floor count as vanished; if fewer than two remain the exponent is −inf.
    """
    if len(sigma_sweep) < 4 or any(int(s) != s or s < 1 for s in sigma_sweep):
        raise PreconditionError(f"decorrelation needs at least 4 positive integer σ, got {list(sigma_sweep)}")
    x = np.arange(resolution) / resolution
    fx = np.asarray(f(x), dtype=float)
    f_norm = np.mean(np.abs(fx) ** p) ** (1.0 / p)
    gaps = []
    for sigma in sigma_sweep:
        # ‖g(σ·)‖ on the same grid equals ‖g‖ and shares its aliasing
        gx = np.asarray(g(np.mod(sigma * x, 1.0)), dtype=float)
        g_norm = np.mean(np.abs(gx) ** p) ** (1.0 / p)
        gaps.append(abs(np.mean(np.abs(fx * gx) ** p) ** (1.0 / p) - f_norm * g_norm))
    slope = _fit_or_vanishing(sigma_sweep, gaps, floor)
    rows = [{'suite': 'decorrelation', 'point': f"p={p},sigma={s}", 'measured': gap,
             'predicted': np.nan, 'residual': np.nan} for s, gap in zip(sigma_sweep, gaps)]
    rows.append({'suite': 'decorrelation', 'point': f"p={p},fit", 'measured': slope,
                 'predicted': -1.0 / p, 'residual': max(0.0, slope + 1.0 / p)})
    return {'sigma': list(sigma_sweep), 'gap': gaps, 'fitted_exponent': slope, 'bound_exponent': -1.0 / p,
            'rows': rows}


def verify_mean_oscillation(a: SpectralField, v: SpectralField, lambda_sweep: Sequence[int],
                            r: float = 2.0, floor: float = 1e-13) -> Dict:
    """
    ∫ a(x) v(λx) dx = Σ_ξ â(−λξ) v̂(ξ) over integer λ, with the bound λ^{-1}‖∇a‖_{L^r}‖v‖_{L^{r'}}.
    """
    if a.n_components != 1 or v.n_components != 1:
        raise PreconditionError("mean-oscillation check works on scalar fields")
    if not v.is_mean_free():
        raise PreconditionError("mean-oscillation check needs a mean-free v")

    xi = wavenumbers(v.grid_dims)
    active = np.nonzero(np.abs(v.coeffs[0]) > 0)
    xi_active = xi[(slice(None),) + active]
    v_active = v.coeffs[(0,) + active]
    a_grid = np.array(a.grid_dims)[:, None]

    r_conj = r / (r - 1.0) if r > 1 else np.inf
    grad_a = norm(gradient(a), 'Lp', p=r)
    v_norm = norm(v, 'Lp', p=r_conj)

    integrals, bounds = [], []
    for lam in lambda_sweep:
        target = -int(lam) * xi_active
        inside = np.all(np.abs(target) < a_grid // 2, axis=0)
        idx = tuple(target[i, inside] % a.grid_dims[i] for i in range(3))
        value = np.sum(a.coeffs[(0,) + idx] * v_active[inside]).real
        integrals.append(float(value))
        bounds.append(grad_a * v_norm / lam)
    slope = _fit_or_vanishing(lambda_sweep, integrals, floor)
    rows = [{'suite': 'mean', 'point': f"lambda={lam}", 'measured': abs(i), 'predicted': b,
             'residual': abs(i) / b if b > 0 else np.nan}
            for lam, i, b in zip(lambda_sweep, integrals, bounds)]
    rows.append({'suite': 'mean', 'point': 'fit', 'measured': slope, 'predicted': -1.0,
                 'residual': max(0.0, slope + 1.0)})
    return {'lambda': list(lambda_sweep), 'integral': integrals, 'bound': bounds,
            'fitted_exponent': slope, 'rows': rows}


def verify_corrector_identity(params: JetParams, profiles: JetProfiles, grid: Sequence[int],
                              t: float = 0.0, wave_set: Optional[WaveVectorSet] = None) -> Dict:
    """Residuals of W + W̃^c = curl W^c and div(W + W̃^c) = 0 for every direction"""
    family = JetFamily(params, profiles, grid, wave_set=wave_set, allow_truncation=True)
    results = [family.corrector_identity_residual(i, t) for i in range(len(family))]
    rows = [{'suite': 'wcwc', 'point': f"lambda={params.lam:g},k={r['k_index']}",
             'measured': max(r['curl_residual'], r['divergence']), 'predicted': 0.0,
             'residual': max(r['curl_residual'], r['divergence'])} for r in results]
    worst = max(row['residual'] for row in rows)
    return {'results': results, 'max_residual': worst, 'truncated': family.truncated, 'rows': rows}


def dense_jet_sum(family: JetFamily, t: float, amplitudes: Optional[Sequence[float]] = None) -> SpectralField:
    """Σ_k a_k W_(k) with constant amplitudes"""
    total = SpectralField.zeros(family.grid, 3)
    amplitudes = amplitudes if amplitudes is not None else [1.0] * len(family)
    for i, amp in enumerate(amplitudes):
        total = total + float(amp) * family.jet(i, t)
    return total


def resolution_for(params: JetParams) -> int:
    """Smallest even grid size resolving κ"""
    return 2 * (math.ceil(params.kappa) + 1)
