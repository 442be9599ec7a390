#!/usr/bin/env python3
"""
Backward schedule for the convex-integration iteration.

Holds the amplitude sequence δ_q, the frequency and mollification parameters λ_q, ℓ_q, ℓ'_q,
the backward times T_q ↓ 0 chosen from the measured decay of R₀, and the smooth energy
profile e(t) tracked within the per-level bands.

λ_q and ℓ_q are stored as natural logarithms: the regimes of interest overflow float64 long
before the relations between them stop being checkable.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import BPoly, CubicSpline

from .config import ToolkitConfig
from .exceptions import (
    ConstraintError,
    InfeasibleDepthError,
    OrderingError,
    PreconditionError,
    RegressionError,
    RepresentabilityError,
)
from .utils import loglog_fit, safe_json_dump

logger = logging.getLogger(__name__)

SCHEDULE_DEFAULTS = ToolkitConfig.SCHEDULE

DELTA_RATIO = 1e-3
MODES = ('desk', 'paper', 'h3')
LOG_FLOAT_MAX = math.log(np.finfo(float).max)
HALVING_MARGIN = 1e-3
LOG_RTOL = 1e-12

# Inequalities each mode reports without enforcing
RELAXED = {
    'desk': {'lambda_power', 'lambda_time', 'lambda_inverse_delta', 'lambda_seventh_root',
             'eps_small', 'b_large', 'b_multiple'},
    'paper': set(),
    'h3': {'lambda_seventh_root', 'lambda_inverse_delta', 'delta_ratio'},
}

PROVENANCE = {
    'ell_definition': "ℓ_q = λ_q^-2 replaces ℓ_q = λ_q^-30",
    'ell_prime': "ℓ'_q = ℓ_q unless backward times supply ℓ'_q",
    'lambda_power': "λ_q ≥ λ_(q-1)^b relaxed to λ_q > λ_(q-1)",
    'lambda_time': "λ_q ≥ T_(q+2)^-2 reported, not enforced",
    'lambda_inverse_delta': "λ_q^-1 ≤ δ_(q+3) reported, not enforced",
    'lambda_seventh_root': "λ_q^(1/7) ∈ N reported, not enforced",
    'eps_small': "ε < 10^-3 reported, not enforced",
    'b_large': "b > 100/ε reported, not enforced",
    'b_multiple': "b ∈ 14N reported, not enforced",
}


def delta_sequence(depth: int, initial: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    δ_0 … δ_{depth+3}: δ_q = 10^{−3q} for q ≥ 3, the first three from `initial`
    (default 1, 10⁻³, 10⁻⁶).
    """
    if depth < 1:
        raise PreconditionError(f"depth must be at least 1, got {depth}")
    deltas = DELTA_RATIO ** np.arange(depth + 4, dtype=float)
    if initial is not None:
        if len(initial) != 3:
            raise PreconditionError(f"expected δ₀, δ₁, δ₂, got {len(initial)} values")
        deltas[:3] = np.asarray(initial, dtype=float)
    return deltas


def initial_amplitudes(R0_norm: float, c_star: float, gap_sup: float = 0.0,
                       v0_energy: float = 0.0) -> Tuple[float, float, float]:
    """
    (δ₀, δ₁, δ₂) with ‖R₀‖_{C_TL¹} ≤ ⅛c_*δ₂, δ₁ = max(8δ₂, sup gap) and δ₀ = max(1, ‖v₀‖²).

    δ₂ never drops below 10⁻⁶ so the band [¾δ₃, δ₂] stays open when R₀ vanishes.
    """
    if c_star <= 0:
        raise PreconditionError(f"c_* must be positive, got {c_star}")
    delta_2 = max(8.0 * R0_norm / c_star, DELTA_RATIO ** 2)
    delta_1 = max(8.0 * delta_2, gap_sup)
    delta_0 = max(1.0, v0_energy)
    return delta_0, delta_1, delta_2


# ----------------------------------------------------------------------------------------------
# Backward times

DecaySource = Union[pd.DataFrame, Callable[[float], float]]


class BackwardTimes(NamedTuple):
    T_seq: np.ndarray          # T_0 = T, T_1, …, T_depth
    ell_prime_seq: np.ndarray  # ℓ'_0, …, ℓ'_{depth−1}
    T_prime_seq: np.ndarray    # T'_1, …, T'_{depth+1}


def decay_function(source: DecaySource, extrapolate: bool = True) -> Callable[[float], float]:
    """
    T* ↦ ‖R₀‖_{C_{[0,T*]}L¹} from a callable or a (T_star, R0_L1) table.

    Tables are interpolated log-log inside their range. Below the smallest T* the fitted power
    law is used when its exponent is positive; anything else is uncertified and returns +inf.
    """
    if callable(source):
        return lambda t: float(source(t))

    table = source.sort_values('T_star')
    t_vals = table['T_star'].to_numpy(dtype=float)
    r_vals = table['R0_L1'].to_numpy(dtype=float)
    if t_vals.size == 0:
        raise PreconditionError("decay table is empty")

    tiny = 1e-300
    log_t = np.log(t_vals)
    log_r = np.log(np.maximum(r_vals, tiny))
    slope = 0.0
    if extrapolate and np.count_nonzero(r_vals > tiny) >= 2:
        try:
            slope, _ = loglog_fit(t_vals, r_vals, floor=tiny)
        except RegressionError:
            slope = 0.0

    def decay(t: float) -> float:
        if t > t_vals[-1] * (1 + 1e-12):
            return float('inf')
        if t >= t_vals[0]:
            value = math.exp(np.interp(math.log(t), log_t, log_r))
            return 0.0 if value <= tiny else value
        if np.all(r_vals[:1] <= tiny):
            return 0.0
        if slope > 1e-8:
            return float(r_vals[0] * (t / t_vals[0]) ** slope)
        return float('inf')

    return decay


def _largest_admissible(decay: Callable[[float], float], upper: float, threshold: float) -> Optional[float]:
    """Largest T* ≤ upper with decay(T*) ≤ threshold, by halving then log-space bisection"""
    if decay(upper) <= threshold:
        return upper
    hi, lo = upper, upper / 2.0
    while decay(lo) > threshold:
        hi, lo = lo, lo / 2.0
        if lo < 1e-300:
            return None
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if decay(mid) <= threshold:
            lo = mid
        else:
            hi = mid
    # clear of the boundary, so rounding in T_q + ℓ'_{q−1} cannot cross it
    return lo * (1.0 - 1e-9)


def select_backward_times(R0_decay: DecaySource, c_star: float, delta_seq: Sequence[float],
                          T: float, depth: Optional[int] = None) -> BackwardTimes:
    """
    Choose T'_{q+1} < T'_q/2 with ‖R₀‖_{C_{[0,T'_{q+1}]}L¹} ≤ ⅛c_*δ_{q+3}, then
    ℓ'_{q−1} = (T'_q − T'_{q+1})/42 and T_q = T'_q − ℓ'_{q−1}.

    T'_1 ∈ (0, T) uses the threshold ⅛c_*δ₃. The divisor 42 leaves ℓ'_{q−1} at half of the
    largest value the 1/20 spacing rule allows.
    """
    delta_seq = np.asarray(delta_seq, dtype=float)
    depth = depth if depth is not None else len(delta_seq) - 4
    if depth < 1:
        raise PreconditionError(f"depth must be at least 1, got {depth}")
    if len(delta_seq) < depth + 4:
        raise PreconditionError(f"depth {depth} needs δ up to index {depth + 3}, got {len(delta_seq)} values")
    if c_star <= 0 or T <= 0:
        raise PreconditionError(f"c_* and T must be positive, got c_*={c_star}, T={T}")

    decay = decay_function(R0_decay)
    T_prime: List[float] = []
    upper = T * (1.0 - HALVING_MARGIN)
    for q in range(1, depth + 2):
        threshold = c_star * delta_seq[q + 2] / 8.0
        chosen = _largest_admissible(decay, upper, threshold)
        if chosen is None:
            raise InfeasibleDepthError(
                f"R₀ decay never reaches ⅛c_*δ_{q + 2} = {threshold:.3e}: cannot certify level q={q}",
                deepest_level=q - 1,
            )
        T_prime.append(chosen)
        upper = chosen / 2.0 * (1.0 - HALVING_MARGIN)

    T_prime = np.asarray(T_prime)
    ell_prime = (T_prime[:-1] - T_prime[1:]) / 42.0
    T_seq = np.concatenate([[float(T)], T_prime[:-1] - ell_prime])
    logger.info(f"Selected {depth} backward times: T_{depth} = {T_seq[-1]:.3e}")
    return BackwardTimes(T_seq=T_seq, ell_prime_seq=ell_prime, T_prime_seq=T_prime)


def backward_time_checks(times: BackwardTimes, R0_decay: DecaySource, c_star: float,
                         delta_seq: Sequence[float]) -> pd.DataFrame:
    """Every inequality of the backward selection, re-evaluated against the decay source"""
    decay = decay_function(R0_decay)
    T_seq, ell_prime, T_prime = (np.asarray(x, dtype=float) for x in times)
    rows = []

    def add(constraint, q, lhs, rhs):
        rows.append({'constraint': constraint, 'q': q, 'lhs': float(lhs), 'rhs': float(rhs),
                     'ok': bool(lhs <= rhs)})

    add('first_below_T', 1, T_prime[0], T_seq[0])
    for q in range(1, len(T_prime)):
        # T_prime[j] is T'_{j+1}
        add('halving', q, T_prime[q], T_prime[q - 1] / 2.0)
    for q in range(1, len(T_seq)):
        ell = ell_prime[q - 1]
        add('stress_threshold', q, decay(T_seq[q] + ell), c_star * delta_seq[q + 2] / 8.0)
        add('ell_prime_gap', q, ell, (T_prime[q - 1] - ell - T_prime[q]) / 20.0)
        add('ordered_next', q, T_prime[q], T_seq[q])
        if q >= 2:
            add('ell_prime_spacing', q, ell_prime[q - 2], (T_seq[q - 1] - T_seq[q]) / 20.0)
    return pd.DataFrame(rows)


# ----------------------------------------------------------------------------------------------
# Parameter specs

@dataclass(frozen=True)
class LevelSlice:
    """Parameters one iteration q → q+1 needs"""

    q: int
    T_q: float
    T_next: float
    T_after_next: float
    delta_next: float        # δ_{q+1}
    delta_after_next: float  # δ_{q+2}
    delta_third: float       # δ_{q+3}
    lambda_next: float       # λ_{q+1}
    ell: float               # ℓ_q
    c_star: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _to_float(name: str, log_values: Sequence[float]) -> np.ndarray:
    logs = np.asarray(log_values, dtype=float)
    over = np.nonzero(logs > LOG_FLOAT_MAX)[0]
    if over.size:
        q = int(over[0])
        raise RepresentabilityError(
            f"{name}_{q} overflows float64 (log {name}_{q} = {logs[q]:.6g} > {LOG_FLOAT_MAX:.2f})"
        )
    return np.exp(logs)


@dataclass(frozen=True)
class ScheduleSpec:
    """
    Parameters of the backward iteration: T_q, δ_q, λ_q, ℓ_q and ℓ'_q.

    Level counts: `depth` frequency levels λ_0 … λ_{depth−1}, backward times T_0 … T_{depth+1}
    and amplitudes δ_0 … δ_{depth+3}.
    """

    mode: str
    T_seq: Tuple[float, ...]
    delta_seq: Tuple[float, ...]
    log_lambda_seq: Tuple[float, ...]
    log_ell_seq: Tuple[float, ...]
    log_ell_prime_seq: Tuple[float, ...]
    c_star: float
    a: float = 2.0
    b: float = 2.0
    eps: float = SCHEDULE_DEFAULTS['eps']
    beta: Optional[float] = None
    ell_exponent: float = 30.0
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in MODES:
            raise PreconditionError(f"unknown schedule mode '{self.mode}', expected one of {MODES}")
        n = len(self.log_lambda_seq)
        if n < 1:
            raise PreconditionError("schedule needs at least one frequency level")
        if len(self.T_seq) < n + 2 or len(self.delta_seq) < n + 4:
            raise PreconditionError(
                f"{n} levels need T_0..T_{n + 1} and δ_0..δ_{n + 3}, "
                f"got {len(self.T_seq)} times and {len(self.delta_seq)} amplitudes"
            )
        if len(self.log_ell_seq) != n or len(self.log_ell_prime_seq) < n:
            raise PreconditionError("ℓ and ℓ' sequences must cover every frequency level")

    @property
    def depth(self) -> int:
        return len(self.log_lambda_seq)

    @property
    def lambda_seq(self) -> np.ndarray:
        return _to_float('λ', self.log_lambda_seq)

    @property
    def ell_seq(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_ell_seq))

    @property
    def ell_prime_seq(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_ell_prime_seq))

    def checks(self) -> pd.DataFrame:
        """
        Every inequality of the parameter selection as a table with columns
        (constraint, q, lhs, rhs, scale, relaxed, ok). Comparisons on λ and ℓ are done on
        logarithms; `scale` says which.
        """
        relaxed = RELAXED[self.mode]
        rows = []
        T = np.asarray(self.T_seq, dtype=float)
        delta = np.asarray(self.delta_seq, dtype=float)
        log_lam = np.asarray(self.log_lambda_seq, dtype=float)
        log_ell = np.asarray(self.log_ell_seq, dtype=float)
        log_ell_p = np.asarray(self.log_ell_prime_seq, dtype=float)
        n = self.depth

        def add(constraint, q, lhs, rhs, scale='linear', strict=False):
            if scale == 'log':
                ok = lhs < rhs if strict else lhs <= rhs + LOG_RTOL * max(1.0, abs(rhs))
            else:
                ok = lhs < rhs if strict else lhs <= rhs
            rows.append({'constraint': constraint, 'q': q, 'lhs': float(lhs), 'rhs': float(rhs),
                         'scale': scale, 'relaxed': constraint in relaxed, 'ok': bool(ok)})

        for q in range(1, len(T)):
            add('T_decreasing', q, T[q], T[q - 1], strict=True)
        add('T_positive', len(T) - 1, 0.0, T[-1], strict=True)
        add('c_star', 0, self.c_star, 1.0, strict=True)
        add('c_star_positive', 0, 0.0, self.c_star, strict=True)

        for q in range(0, len(delta) - 2):
            add('delta_band', q, 0.75 * delta[q + 2], delta[q + 1], strict=True)
        for q in range(3, len(delta) - 1):
            ratio = delta[q + 1] / delta[q]
            add('delta_ratio', q, abs(ratio - DELTA_RATIO), 1e-12 * DELTA_RATIO)

        for q in range(n):
            add('ell_spacing', q, log_ell[q], math.log((T[q + 1] - T[q + 2]) / 20.0), scale='log')
            add('ell_below_ell_prime', q, log_ell[q], log_ell_p[q], scale='log')
            add('ell_definition', q, abs(log_ell[q] + self.ell_exponent * log_lam[q]),
                LOG_RTOL * max(1.0, abs(log_ell[q])))
            add('lambda_ell_prime', q, -log_ell_p[q] / 30.0, log_lam[q], scale='log')
            add('lambda_time', q, -2.0 * math.log(T[q + 2]), log_lam[q], scale='log')
            add('lambda_inverse_delta', q, -log_lam[q], math.log(delta[q + 3]), scale='log')
            self._seventh_root_check(add, q, log_lam[q])
        for q in range(2, n + 2):
            if q - 2 < len(log_ell_p):
                add('ell_prime_spacing', q, log_ell_p[q - 2], math.log((T[q - 1] - T[q]) / 20.0), scale='log')
        add('lambda_base', 0, math.log(self.a), log_lam[0], scale='log')
        for q in range(1, n):
            add('lambda_increasing', q, log_lam[q - 1], log_lam[q], scale='log', strict=True)
            add('lambda_power', q, self.b * log_lam[q - 1], log_lam[q], scale='log')

        if self.mode in ('paper', 'desk'):
            add('eps_small', 0, self.eps, 1e-3, strict=True)
            add('b_large', 0, 100.0 / self.eps, self.b, strict=True)
            add('b_multiple', 0, self.b % 14, 0.0)
        if self.mode == 'h3':
            add('b_large', 0, 1e4 / self.eps, self.b, strict=True)
            add('b_multiple', 0, self.b % 2, 0.0)
            beta = self.beta if self.beta is not None else 0.0
            add('beta_positive', 0, 0.0, beta, strict=True)
            add('beta_range', 0, beta, 3.0 / (1000.0 * self.b ** 4), strict=True)
            for q in range(1, len(T)):
                target = 0.5 * (self.c_star * delta[q + 2] / 8.0) ** (10.0 / 3.0)
                add('T_h3', q, abs(T[q] - target), 1e-12 * target)
            for q in range(1, min(n + 1, len(T))):
                add('h3_ell_gap', q, log_ell[q - 1], math.log(T[q]), scale='log', strict=True)

        return pd.DataFrame(rows)

    @staticmethod
    def _seventh_root_check(add, q: int, log_lam: float):
        if log_lam / 7.0 > 700.0:
            # Not representable: recorded as satisfied by the symbolic construction
            add('lambda_seventh_root', q, 0.0, 0.0)
            return
        root = math.exp(log_lam / 7.0)
        add('lambda_seventh_root', q, abs(root - round(root)), 1e-6 * max(1.0, root))

    def validate(self) -> pd.DataFrame:
        """Raise ConstraintError on the first enforced inequality that fails; return all checks"""
        table = self.checks()
        failing = table[~table['ok'] & ~table['relaxed']]
        if len(failing):
            row = failing.iloc[0]
            raise ConstraintError(
                f"{self.mode} schedule violates {row['constraint']} at q={int(row['q'])}: "
                f"{row['lhs']:.6g} vs {row['rhs']:.6g} ({row['scale']})"
            )
        return table

    def slice(self, q: int) -> LevelSlice:
        """Parameters of the step q → q+1"""
        if not 0 <= q < self.depth - 1:
            raise PreconditionError(f"level {q} has no successor in a schedule of depth {self.depth}")
        return LevelSlice(
            q=q,
            T_q=float(self.T_seq[q]),
            T_next=float(self.T_seq[q + 1]),
            T_after_next=float(self.T_seq[q + 2]),
            delta_next=float(self.delta_seq[q + 1]),
            delta_after_next=float(self.delta_seq[q + 2]),
            delta_third=float(self.delta_seq[q + 3]),
            lambda_next=float(_to_float('λ', [self.log_lambda_seq[q + 1]])[0]),
            ell=float(math.exp(self.log_ell_seq[q])),
            c_star=self.c_star,
        )

    def table(self) -> pd.DataFrame:
        """Per-level values for the plan CSV; logs are kept where floats overflow"""
        rows = []
        for q in range(len(self.T_seq)):
            row = {'q': q, 'T': self.T_seq[q], 'delta': self.delta_seq[q]}
            if q < self.depth:
                row.update({'log_lambda': self.log_lambda_seq[q], 'log_ell': self.log_ell_seq[q],
                            'log_ell_prime': self.log_ell_prime_seq[q]})
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> 'ScheduleSpec':
        fields_ = dict(data)
        for key in ('T_seq', 'delta_seq', 'log_lambda_seq', 'log_ell_seq', 'log_ell_prime_seq', 'notes'):
            fields_[key] = tuple(fields_.get(key, ()))
        return cls(**fields_)

    def to_json(self, path: Path) -> bool:
        return safe_json_dump(self.to_dict(), Path(path), indent=ToolkitConfig.OUTPUT['indent'])

    @classmethod
    def from_json(cls, path: Path) -> 'ScheduleSpec':
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def _halving_times(T: float, count: int) -> np.ndarray:
    return T * 2.0 ** -np.arange(count, dtype=float)


def _times_from(backward: Optional[BackwardTimes], T: float, count: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if backward is None:
        return _halving_times(T, count), None
    T_seq = np.asarray(backward.T_seq, dtype=float)
    if len(T_seq) < count:
        raise PreconditionError(f"backward selection produced {len(T_seq)} times, need {count}")
    return T_seq[:count], np.asarray(backward.ell_prime_seq, dtype=float)


def desk_scale_params(lambda_list: Sequence[float], T: float = SCHEDULE_DEFAULTS['T'],
                      c_star: float = 1e-3, eps: float = SCHEDULE_DEFAULTS['eps'],
                      delta_seq: Optional[Sequence[float]] = None,
                      backward: Optional[BackwardTimes] = None) -> ScheduleSpec:
    """
    Moderate frequencies with ℓ_q = λ_q^{−2}. Backward times halve from T unless a
    backward selection is given. Every relaxed inequality carries a provenance note.
    """
    lams = np.asarray(lambda_list, dtype=float)
    if lams.size < 1 or np.any(lams <= 1):
        raise OrderingError(f"desk frequencies must exceed 1, got {list(lambda_list)}")
    if np.any(np.diff(lams) <= 0):
        raise OrderingError(f"desk frequencies must increase strictly, got {list(lambda_list)}")

    n = lams.size
    T_seq, ell_prime = _times_from(backward, T, n + 2)
    deltas = np.asarray(delta_seq, dtype=float) if delta_seq is not None else delta_sequence(n)
    log_lam = np.log(lams)
    log_ell = -2.0 * log_lam
    log_ell_p = np.log(ell_prime[:n]) if ell_prime is not None else log_ell.copy()

    notes = [f"{name}: {text}" for name, text in PROVENANCE.items()
             if name in RELAXED['desk'] or name in ('ell_definition', 'ell_prime')]
    spec = ScheduleSpec(
        mode='desk', T_seq=tuple(T_seq), delta_seq=tuple(deltas), log_lambda_seq=tuple(log_lam),
        log_ell_seq=tuple(log_ell), log_ell_prime_seq=tuple(log_ell_p), c_star=c_star,
        a=float(lams[0]), b=2.0, eps=eps, ell_exponent=2.0, notes=tuple(notes),
    )
    spec.validate()
    return spec


def _ceil_seventh_power(log_value: float, name: str) -> float:
    """log of the smallest m⁷ ≥ exp(log_value) with m integer"""
    if log_value / 7.0 > 700.0 or log_value > LOG_FLOAT_MAX:
        raise RepresentabilityError(
            f"{name} overflows float64 (log {name} ≥ {log_value:.6g} > {LOG_FLOAT_MAX:.2f})"
        )
    root = math.exp(log_value / 7.0)
    m = math.ceil(root * (1 - 1e-14))
    if m ** 7 < math.exp(log_value) * (1 - 1e-12):
        m += 1
    return 7.0 * math.log(m)


def paper_params(a: float, b: float, eps: float, depth: int, T: float = SCHEDULE_DEFAULTS['T'],
                 c_star: float = 1e-3, delta_seq: Optional[Sequence[float]] = None,
                 backward: Optional[BackwardTimes] = None) -> ScheduleSpec:
    """
    λ_0 ≥ max{a, T_2^{−2}, (ℓ'_0)^{−1/30}}, λ_q ≥ max{λ_{q−1}^b, T_{q+2}^{−2}, (ℓ'_q)^{−1/30}},
    each rounded up to a seventh power and lifted so that λ_q^{−1} ≤ δ_{q+3}; ℓ_q = λ_q^{−30}.

    Evaluation is refused as soon as a λ_q leaves float64.
    """
    if not 0 < eps < 1e-3:
        raise ConstraintError(f"paper mode needs 0 < ε < 10^-3, got {eps}")
    if b <= 100.0 / eps or b % 14:
        raise ConstraintError(f"paper mode needs b ∈ 14N with b > 100/ε = {100.0 / eps:.6g}, got {b}")

    T_seq, ell_prime = _times_from(backward, T, depth + 2)
    if ell_prime is None:
        ell_prime = (T_seq[1:-1] - T_seq[2:]) / 42.0
    if len(ell_prime) < depth:
        raise PreconditionError(f"need ℓ'_0..ℓ'_{depth - 1}, got {len(ell_prime)} values")
    deltas = np.asarray(delta_seq, dtype=float) if delta_seq is not None else delta_sequence(depth)

    log_lam: List[float] = []
    for q in range(depth):
        floor = max(math.log(a) if q == 0 else b * log_lam[-1],
                    -2.0 * math.log(T_seq[q + 2]),
                    -math.log(ell_prime[q]) / 30.0,
                    -math.log(deltas[q + 3]))
        log_lam.append(_ceil_seventh_power(floor, f"λ_{q}"))
    log_lam = np.asarray(log_lam)

    spec = ScheduleSpec(
        mode='paper', T_seq=tuple(T_seq), delta_seq=tuple(deltas), log_lambda_seq=tuple(log_lam),
        log_ell_seq=tuple(-30.0 * log_lam), log_ell_prime_seq=tuple(np.log(ell_prime[:depth])),
        c_star=c_star, a=float(a), b=float(b), eps=eps, ell_exponent=30.0,
        notes=("λ_q lifted to δ_(q+3)^-1 where a alone does not reach it",),
    )
    spec.validate()
    return spec


def h3_params(a: float, b: float, beta: float, c_star: float, depth: int, eps: float,
              T: float = SCHEDULE_DEFAULTS['T'],
              initial: Optional[Sequence[float]] = None) -> ScheduleSpec:
    """
    Regular-data parameters: λ_q = a^{b^q}, δ_{q+3} = ½λ_{q+3}^{−2β}, ℓ_q = λ_q^{−30} and
    T_q = ½(⅛c_*δ_{q+2})^{10/3} for q ≥ 1, all held as logarithms.
    """
    if b % 2 or b <= 1e4 / eps:
        raise ConstraintError(f"h3 mode needs b ∈ 2N with b > 10^4/ε = {1e4 / eps:.6g}, got {b}")
    if not 0 < beta < 3.0 / (1000.0 * b ** 4):
        raise ConstraintError(f"h3 mode needs 0 < β < 3/(1000 b^4), got {beta}")
    if a < 2:
        raise ConstraintError(f"h3 mode needs an integer a ≥ 2, got {a}")

    levels = depth + 4
    log_a = math.log(a)
    log_lam_all = np.array([log_a * float(b) ** q for q in range(levels)])
    deltas = np.empty(levels)
    deltas[:3] = initial if initial is not None else (1.0, 0.75, 0.625)
    deltas[3:] = 0.5 * np.exp(-2.0 * beta * log_lam_all[3:])

    T_seq = np.empty(depth + 2)
    T_seq[0] = T
    T_seq[1:] = 0.5 * (c_star * deltas[3:depth + 4] / 8.0) ** (10.0 / 3.0)
    log_lam = log_lam_all[:depth]

    spec = ScheduleSpec(
        mode='h3', T_seq=tuple(T_seq), delta_seq=tuple(deltas), log_lambda_seq=tuple(log_lam),
        log_ell_seq=tuple(-30.0 * log_lam), log_ell_prime_seq=tuple(-30.0 * log_lam),
        c_star=c_star, a=float(a), b=float(b), eps=eps, beta=beta, ell_exponent=30.0,
        notes=("ℓ'_q = ℓ_q: explicit times need no separate backward spacing",),
    )
    spec.validate()
    return spec


# ----------------------------------------------------------------------------------------------
# Energy profile

BaseCurve = Union[Callable[[np.ndarray], np.ndarray], pd.DataFrame]


def _base_callable(base: BaseCurve) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(base, pd.DataFrame):
        table = base.sort_values('t')
        return CubicSpline(table['t'].to_numpy(dtype=float), table['energy'].to_numpy(dtype=float))
    return base


@dataclass
class EnergyProfile:
    """
    e(t) = base(t) + gap(t) with a C² quintic gap held inside the per-level bands
    ¾δ_{q+2} ≤ gap ≤ δ_{q+1} on [T_{q+1} − ℓ_q, T_q + ℓ_{q−1}].
    """

    base: Callable[[np.ndarray], np.ndarray]
    gap: BPoly
    band_targets: pd.DataFrame
    knots: pd.DataFrame
    family: float
    T: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        value = np.asarray(self.base(t), dtype=float) + self.gap(t)
        return float(value) if np.ndim(value) == 0 else value

    def gap_values(self, t) -> np.ndarray:
        return self.gap(np.asarray(t, dtype=float))


def energy_bands(delta_seq: Sequence[float], T_seq: Sequence[float], ell_seq: Sequence[float]) -> pd.DataFrame:
    """Band [lower, upper] on [t_lo, t_hi] for each level with an ℓ_q"""
    delta = np.asarray(delta_seq, dtype=float)
    T_seq = np.asarray(T_seq, dtype=float)
    ell = np.asarray(ell_seq, dtype=float)
    rows = []
    for q in range(len(ell)):
        if q + 1 >= len(T_seq) or q + 2 >= len(delta):
            raise PreconditionError(f"level {q} needs T_{q + 1} and δ_{q + 2}")
        lower, upper = 0.75 * delta[q + 2], delta[q + 1]
        if not lower < upper:
            raise PreconditionError(f"band at q={q} is empty: ¾δ_{q + 2} = {lower:.3e} ≥ δ_{q + 1} = {upper:.3e}")
        t_hi = T_seq[0] if q == 0 else T_seq[q] + ell[q - 1]
        rows.append({'q': q, 't_lo': T_seq[q + 1] - ell[q], 't_hi': t_hi, 'lower': lower, 'upper': upper})
    return pd.DataFrame(rows)


def build_energy_profile(base: BaseCurve, delta_seq: Sequence[float], T_seq: Sequence[float],
                         ell_seq: Sequence[float], family: float = SCHEDULE_DEFAULTS['family'],
                         n_points: int = SCHEDULE_DEFAULTS['energy_check_points']) -> EnergyProfile:
    """
    Knots sit at both ends of every overlap [T_{q+1} − ℓ_q, T_{q+1} + ℓ_q] with value ⅞δ_{q+2},
    which lies in both neighbouring bands, and at a quarter and three quarters of each band
    interior with value mid_q + family·½·halfwidth_q. A knot at t = 0 with value 0 pins
    e(0) = base(0). Between knots the gap is the quintic with zero first and second
    derivatives, so it never leaves the range of its two end values.
    """
    delta = np.asarray(delta_seq, dtype=float)
    T_seq = np.asarray(T_seq, dtype=float)
    ell = np.asarray(ell_seq, dtype=float)
    bands = energy_bands(delta, T_seq, ell)
    n = len(bands)
    if T_seq[n] - ell[n - 1] <= 0:
        raise PreconditionError(f"deepest band starts at T_{n} − ℓ_{n - 1} ≤ 0")

    knots = [(0.0, 0.0, -1)]
    for q in range(n - 1, -1, -1):
        band = bands.iloc[q]
        overlap = 0.875 * delta[q + 2]
        knots.append((T_seq[q + 1] - ell[q], overlap, q))
        knots.append((T_seq[q + 1] + ell[q], overlap, q))
        interior_lo = T_seq[q + 1] + ell[q]
        interior_hi = T_seq[0] if q == 0 else T_seq[q] - ell[q - 1]
        if interior_hi <= interior_lo:
            raise PreconditionError(f"band interior at q={q} is empty: [{interior_lo:.3e}, {interior_hi:.3e}]")
        mid = 0.5 * (band['lower'] + band['upper'])
        halfwidth = 0.5 * (band['upper'] - band['lower'])
        value = mid + family * 0.5 * halfwidth
        length = interior_hi - interior_lo
        knots.append((interior_lo + 0.25 * length, value, q))
        knots.append((interior_lo + 0.75 * length, value, q))
        if q == 0:
            knots.append((interior_hi, value, q))

    knot_frame = pd.DataFrame(knots, columns=['t', 'value', 'q'])
    t_knots = knot_frame['t'].to_numpy()
    if np.any(np.diff(t_knots) <= 0):
        raise PreconditionError("energy-profile knots are not strictly increasing; check ℓ spacing")

    derivatives = [[v, 0.0, 0.0] for v in knot_frame['value']]
    gap = BPoly.from_derivatives(t_knots, derivatives)
    profile = EnergyProfile(base=_base_callable(base), gap=gap, band_targets=bands,
                            knots=knot_frame, family=float(family), T=float(T_seq[0]))
    validate_profile(profile, n_points=n_points)
    return profile


def validate_profile(profile: EnergyProfile, n_points: int = SCHEDULE_DEFAULTS['energy_check_points']) -> pd.DataFrame:
    """Sweep [0, T] and check band membership and e ≥ 0; ConstraintError names the worst t"""
    bands = profile.band_targets
    t = np.union1d(np.linspace(0.0, profile.T, n_points),
                   np.concatenate([profile.knots['t'].to_numpy(), bands['t_lo'], bands['t_hi']]))
    t = t[(t >= 0) & (t <= profile.T)]
    gap = profile.gap_values(t)
    rows = []
    for _, band in bands.iterrows():
        mask = (t >= band['t_lo']) & (t <= band['t_hi'])
        values = gap[mask]
        tol = 1e-12 * band['upper']
        excess = np.maximum(band['lower'] - values, values - band['upper'])
        worst = int(np.argmax(excess))
        if excess[worst] > tol:
            bad_t = float(t[mask][worst])
            raise ConstraintError(
                f"energy gap {values[worst]:.6e} at t={bad_t:.6e} leaves band q={int(band['q'])} "
                f"[{band['lower']:.3e}, {band['upper']:.3e}]",
                t=bad_t,
            )
        rows.append({'q': int(band['q']), 't_lo': band['t_lo'], 't_hi': band['t_hi'],
                     'lower': band['lower'], 'upper': band['upper'],
                     'min_gap': float(values.min()), 'max_gap': float(values.max()), 'ok': True})

    energy = profile(t)
    if np.min(energy) < 0:
        bad_t = float(t[int(np.argmin(energy))])
        raise ConstraintError(f"energy profile is negative at t={bad_t:.6e}", t=bad_t)
    return pd.DataFrame(rows)
