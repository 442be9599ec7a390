#!/usr/bin/env python3
"""
Rational direction set for the geometric decomposition of symmetric matrices.

Six orthonormal frames (k, k₁, k₂) built from the 3-4-5 triple. Near the identity every
symmetric S splits as S = Σ_k γ_(k)(S)² k₁⊗k₁ with smooth positive γ_(k); the split is the
unique solution of a 6×6 linear system since the six k₁⊗k₁ span Sym(3).
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from .exceptions import AdmissibilityError, CertificationError, PreconditionError

logger = logging.getLogger(__name__)

# (5k, 5k₁); k₂ = k × k₁
FRAME_SEEDS = (
    ((-3, 4, 0), (4, 3, 0)),
    ((3, 4, 0), (4, -3, 0)),
    ((0, -3, 4), (0, 4, 3)),
    ((0, 3, 4), (0, 4, -3)),
    ((4, 0, -3), (3, 0, 4)),
    ((4, 0, 3), (-3, 0, 4)),
)
SEED_SCALE = 5

# vec(S) = (S11, S22, S33, S12, S23, S13)
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))

CERTIFY_CHUNK = 1000
SAFETY_FACTOR = 0.9
BISECTION_STEPS = 60


@dataclass(frozen=True, eq=False)
class Frame:
    """One orthonormal frame with its integer form N_Λ·(k, k₁, k₂)"""

    k: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    k_int: Tuple[int, int, int]
    k1_int: Tuple[int, int, int]
    k2_int: Tuple[int, int, int]

    def orthonormality_residual(self) -> float:
        m = np.stack([self.k, self.k1, self.k2])
        return float(np.abs(m @ m.T - np.eye(3)).max())


@dataclass(frozen=True, eq=False)
class WaveVectorSet:
    """Direction set Λ with its decomposition data and certified admissibility radius"""

    entries: Tuple[Frame, ...]
    n_lambda: int
    basis_matrix: np.ndarray
    inverse_basis: np.ndarray
    condition_number: float
    eps_u: float
    m_star: float
    n_certify_samples: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def k_matrix(self) -> np.ndarray:
        return np.stack([f.k for f in self.entries])

    @property
    def k1_matrix(self) -> np.ndarray:
        return np.stack([f.k1 for f in self.entries])

    @property
    def k2_matrix(self) -> np.ndarray:
        return np.stack([f.k2 for f in self.entries])


def sym_vec(S: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric matrices → (..., 6) coordinates"""
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., i, j] for i, j in SYM_INDEX], axis=-1)


def sym_unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    S = np.empty(v.shape[:-1] + (3, 3))
    for n, (i, j) in enumerate(SYM_INDEX):
        S[..., i, j] = v[..., n]
        S[..., j, i] = v[..., n]
    return S


def _rational_frame(k_seed, k1_seed) -> Tuple[List[Fraction], List[Fraction], List[Fraction]]:
    k = [Fraction(x, SEED_SCALE) for x in k_seed]
    k1 = [Fraction(x, SEED_SCALE) for x in k1_seed]
    k2 = [k[1] * k1[2] - k[2] * k1[1], k[2] * k1[0] - k[0] * k1[2], k[0] * k1[1] - k[1] * k1[0]]
    return k, k1, k2


def _integer_form(vec: List[Fraction], n_lambda: int) -> Tuple[int, int, int]:
    scaled = [x * n_lambda for x in vec]
    if any(x.denominator != 1 for x in scaled):
        raise CertificationError(f"N_Λ={n_lambda} does not integerize {vec}")
    return tuple(int(x) for x in scaled)


def _random_unit_symmetric(seed: int, chunk: int, count: int) -> np.ndarray:
    rng = np.random.default_rng([seed, chunk])
    a = rng.standard_normal((count, 3, 3))
    E = 0.5 * (a + np.swapaxes(a, -1, -2))
    return E / np.linalg.norm(E, axis=(-2, -1), keepdims=True)


def sample_directions(n_samples: int, seed: int = 0) -> np.ndarray:
    """Unit-Frobenius symmetric directions, nested in n_samples for a fixed seed"""
    chunks = []
    for chunk, start in enumerate(range(0, n_samples, CERTIFY_CHUNK)):
        chunks.append(_random_unit_symmetric(seed, chunk, min(CERTIFY_CHUNK, n_samples - start)))
    return np.concatenate(chunks)


def _coefficients(S: np.ndarray, inverse_basis: np.ndarray) -> np.ndarray:
    return sym_vec(S) @ inverse_basis.T


def certify_radius(wave_set: WaveVectorSet, n_samples: int, seed: int = 0) -> Tuple[float, float]:
    """
    Sampled certificate of the admissibility radius ε_u and of the C⁴ bound M_*.

    The coefficients are affine along each ray Id + rE, so positivity on the ray is
    bisected on c(Id) + r·c(E). Returns (0.9·r, m_star).
    """
    if n_samples < CERTIFY_CHUNK:
        raise PreconditionError(f"certify_radius needs at least {CERTIFY_CHUNK} samples, got {n_samples}")

    E = sample_directions(n_samples, seed)
    c_id = _coefficients(np.eye(3), wave_set.inverse_basis)
    c_dir = _coefficients(E, wave_set.inverse_basis)
    if np.any(c_id <= 0):
        raise CertificationError(f"identity coefficients not positive: {c_id}")

    def positive(r: float) -> bool:
        return bool(np.all(c_id + r * c_dir > 0))

    lo, hi = 0.0, 1.0
    while positive(hi):
        lo, hi = hi, 2.0 * hi
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if positive(mid):
            lo = mid
        else:
            hi = mid
    eps_u = SAFETY_FACTOR * lo

    m_star = _derivative_bound(c_id, c_dir, eps_u)
    logger.info(f"Certified ε_u={eps_u:.6f}, M_*={m_star:.4f} over {n_samples} directions")
    return eps_u, m_star


def _derivative_bound(c_id: np.ndarray, c_dir: np.ndarray, radius: float, n_points: int = 101) -> float:
    """max over directions of Σ_k max_{j≤4} sup |d^j γ_(k)| along Id + tE, |t| ≤ radius"""
    t = np.linspace(-radius, radius, n_points)
    h = t[1] - t[0]
    gamma = np.sqrt(c_id[None, None, :] + t[None, :, None] * c_dir[:, None, :])
    bound = np.abs(gamma).max(axis=1)
    values = gamma
    for _ in range(4):
        values = np.diff(values, axis=1) / h
        bound = np.maximum(bound, np.abs(values).max(axis=1))
    return float(bound.sum(axis=1).max())


@lru_cache(maxsize=4)
def build_wavevector_set(n_samples: int = CERTIFY_CHUNK, seed: int = 0) -> WaveVectorSet:
    """The fixed six-frame 3-4-5 direction set, validated and certified"""
    rational = [_rational_frame(k, k1) for k, k1 in FRAME_SEEDS]
    n_lambda = 1
    for frame in rational:
        for vec in frame:
            for x in vec:
                n_lambda = math.lcm(n_lambda, x.denominator)

    entries = []
    for k, k1, k2 in rational:
        frame = Frame(
            k=np.array([float(x) for x in k]),
            k1=np.array([float(x) for x in k1]),
            k2=np.array([float(x) for x in k2]),
            k_int=_integer_form(k, n_lambda),
            k1_int=_integer_form(k1, n_lambda),
            k2_int=_integer_form(k2, n_lambda),
        )
        residual = frame.orthonormality_residual()
        if residual > 1e-14:
            raise CertificationError(f"frame {frame.k_int} not orthonormal, residual {residual:.2e}")
        entries.append(frame)

    basis = np.stack([sym_vec(np.outer(f.k1, f.k1)) for f in entries], axis=1)
    singular = np.linalg.svd(basis, compute_uv=False)
    if singular.min() <= 1e-12 * singular.max():
        raise CertificationError("k₁⊗k₁ do not span the symmetric matrices")
    inverse = np.linalg.inv(basis)
    basis.setflags(write=False)
    inverse.setflags(write=False)

    provisional = WaveVectorSet(
        entries=tuple(entries), n_lambda=n_lambda, basis_matrix=basis, inverse_basis=inverse,
        condition_number=float(singular.max() / singular.min()), eps_u=np.nan, m_star=np.nan,
        n_certify_samples=0,
    )
    eps_u, m_star = certify_radius(provisional, n_samples, seed)
    return WaveVectorSet(
        entries=tuple(entries), n_lambda=n_lambda, basis_matrix=basis, inverse_basis=inverse,
        condition_number=provisional.condition_number, eps_u=eps_u, m_star=m_star,
        n_certify_samples=n_samples,
    )


def gamma_squared(S: np.ndarray, wave_set: WaveVectorSet) -> np.ndarray:
    """
    Coefficients c_k = γ_(k)(S)² with Σ_k c_k k₁⊗k₁ = S.

    S may be a single matrix or a stack (..., 3, 3); the result has shape (..., 6).
    """
    S = np.asarray(S, dtype=float)
    if S.shape[-2:] != (3, 3):
        raise PreconditionError(f"expected (..., 3, 3) matrices, got shape {S.shape}")

    distance = np.linalg.norm(S - np.eye(3), axis=(-2, -1))
    worst = float(np.max(distance)) if distance.size else 0.0
    if worst > wave_set.eps_u:
        raise AdmissibilityError(
            f"‖S − Id‖_F = {worst:.6f} exceeds the admissibility radius ε_u = {wave_set.eps_u:.6f}"
        )

    coeffs = _coefficients(S, wave_set.inverse_basis)
    if np.any(coeffs <= 0):
        raise CertificationError(
            f"negative coefficient {coeffs.min():.3e} inside the certified radius (‖S−Id‖={worst:.6f})"
        )
    return coeffs


def gamma(S: np.ndarray, wave_set: WaveVectorSet) -> np.ndarray:
    return np.sqrt(gamma_squared(S, wave_set))


def reconstruct(coeffs: np.ndarray, wave_set: WaveVectorSet) -> np.ndarray:
    """Σ_k c_k k₁⊗k₁"""
    return sym_unvec(np.asarray(coeffs, dtype=float) @ wave_set.basis_matrix.T)


def admissible_c_star(wave_set: WaveVectorSet) -> float:
    """c_* = ½·min{1, ε_u/500}"""
    return 0.5 * min(1.0, wave_set.eps_u / 500.0)


def frame_table(wave_set: WaveVectorSet) -> pd.DataFrame:
    """One row per frame plus the set-level constants, as emitted by `geometry dump`"""
    rows = []
    c_id = gamma_squared(np.eye(3), wave_set)
    for index, (frame, c) in enumerate(zip(wave_set.entries, c_id)):
        rows.append({
            'index': index,
            'k': ' '.join(str(x) for x in frame.k_int),
            'k1': ' '.join(str(x) for x in frame.k1_int),
            'k2': ' '.join(str(x) for x in frame.k2_int),
            'gamma_sq_identity': c,
            'orthonormality_residual': frame.orthonormality_residual(),
            'n_lambda': wave_set.n_lambda,
            'eps_u': wave_set.eps_u,
            'm_star': wave_set.m_star,
            'condition_number': wave_set.condition_number,
        })
    return pd.DataFrame(rows)


def summary(wave_set: WaveVectorSet) -> Dict[str, float]:
    return {
        'n_frames': len(wave_set),
        'n_lambda': wave_set.n_lambda,
        'rank': int(np.linalg.matrix_rank(wave_set.basis_matrix)),
        'condition_number': wave_set.condition_number,
        'eps_u': wave_set.eps_u,
        'm_star': wave_set.m_star,
        'c_star': admissible_c_star(wave_set),
    }
