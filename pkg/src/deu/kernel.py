"""Closed-form DEU activations.

A DEU neuron maps its pre-activation ``t`` to the solution ``y(t)`` of

    a*y'' + b*y' + c*y = u(t),      u(t) = 1 if t > 0 else 0

with ``y = f(t) + c1*f1(t) + c2*f2(t)``. ``f`` is the zero-initial-condition
step response and ``(f1, f2)`` a fixed homogeneous basis that depends on which
of the seven structural subspaces (and, for two of them, which damping regime)
the coefficients fall in. Partials with respect to ``t, a, b, c`` come from
forward-mode dual numbers; partials with respect to ``c1, c2`` are the basis
values themselves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import dual
from .dual import Dual


class InvalidParameterError(ValueError):
    """A DEU coefficient is NaN or infinite."""


class InvalidInputError(ValueError):
    """A pre-activation value is NaN or infinite."""


class ContractViolation(ValueError):
    """Parameters were passed to the evaluator without being resolved first."""


class Structural(enum.IntEnum):
    FULL = 0
    NO_DAMPING = 1      # b = 0
    NO_STIFFNESS = 2    # c = 0
    NO_MASS = 3         # a = 0
    MASS_ONLY = 4       # b = c = 0
    DAMPING_ONLY = 5    # a = c = 0
    STIFFNESS_ONLY = 6  # a = b = 0


class Regime(enum.IntEnum):
    OVERDAMPED = 0
    UNDERDAMPED = 1
    CRITICAL = 2
    OSCILLATORY = 3
    HYPERBOLIC = 4
    NOT_APPLICABLE = 5


class SubspaceId(NamedTuple):
    structural: Structural
    regime: Regime

    def __str__(self) -> str:
        if self.regime is Regime.NOT_APPLICABLE:
            return self.structural.name.lower()
        return f"{self.structural.name.lower()}/{self.regime.name.lower()}"


# (a is zero, b is zero, c is zero) -> structural subspace
_ZERO_PATTERN = {
    (False, False, False): Structural.FULL,
    (False, True, False): Structural.NO_DAMPING,
    (False, False, True): Structural.NO_STIFFNESS,
    (True, False, False): Structural.NO_MASS,
    (False, True, True): Structural.MASS_ONLY,
    (True, False, True): Structural.DAMPING_ONLY,
    (True, True, False): Structural.STIFFNESS_ONLY,
}
_PATTERN_TABLE = np.full(8, -1, dtype=np.int8)
for (_za, _zb, _zc), _s in _ZERO_PATTERN.items():
    _PATTERN_TABLE[4 * _za + 2 * _zb + _zc] = _s

ALL_SUBSPACES = (
    SubspaceId(Structural.FULL, Regime.OVERDAMPED),
    SubspaceId(Structural.FULL, Regime.UNDERDAMPED),
    SubspaceId(Structural.FULL, Regime.CRITICAL),
    SubspaceId(Structural.NO_DAMPING, Regime.OSCILLATORY),
    SubspaceId(Structural.NO_DAMPING, Regime.HYPERBOLIC),
    SubspaceId(Structural.NO_STIFFNESS, Regime.NOT_APPLICABLE),
    SubspaceId(Structural.NO_MASS, Regime.NOT_APPLICABLE),
    SubspaceId(Structural.MASS_ONLY, Regime.NOT_APPLICABLE),
    SubspaceId(Structural.DAMPING_ONLY, Regime.NOT_APPLICABLE),
    SubspaceId(Structural.STIFFNESS_ONLY, Regime.NOT_APPLICABLE),
)


@dataclass(frozen=True)
class KernelConfig:
    epsilon: float = 1e-3
    exp_arg_clamp: float = 30.0
    output_clamp: float = 1e4

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        for name in ("exp_arg_clamp", "output_clamp"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value}")


@dataclass(frozen=True)
class DeuParams:
    a: float
    b: float
    c: float
    c1: float = 0.0
    c2: float = 0.0
    frozen_a: bool = False
    frozen_b: bool = False
    frozen_c: bool = False

    @property
    def coefficients(self) -> tuple[float, float, float, float, float]:
        return (self.a, self.b, self.c, self.c1, self.c2)


@dataclass(frozen=True)
class EvalResult:
    y: float
    dy_dt: float
    dy_da: float
    dy_db: float
    dy_dc: float
    dy_dc1: float
    dy_dc2: float


FIELDS = ("y", "dy_dt", "dy_da", "dy_db", "dy_dc", "dy_dc1", "dy_dc2")


@dataclass
class EvalGrid:
    """Array-valued :class:`EvalResult`; every field has the shape of the input ``t``."""

    y: np.ndarray
    dy_dt: np.ndarray
    dy_da: np.ndarray
    dy_db: np.ndarray
    dy_dc: np.ndarray
    dy_dc1: np.ndarray
    dy_dc2: np.ndarray

    def at(self, *index) -> EvalResult:
        return EvalResult(*(float(getattr(self, f)[index]) for f in FIELDS))


# ---------------------------------------------------------------------------
# resolution


def resolve_arrays(a, b, c, frozen, cfg: KernelConfig):
    """Vectorized subspace resolution.

    ``frozen`` is a boolean array of shape ``(3, n)`` for (a, b, c). Returns
    ``(a, b, c, frozen, structural, regime)`` as new arrays; inputs are not
    modified.
    """
    eps = cfg.epsilon
    coef = np.array([a, b, c], dtype=np.float64).reshape(3, -1)
    frozen = np.array(frozen, dtype=bool).reshape(3, -1)
    if not np.all(np.isfinite(coef)):
        bad = np.argwhere(~np.isfinite(coef))[0]
        raise InvalidParameterError(f"non-finite coefficient {'abc'[bad[0]]} at neuron {bad[1]}")

    zero = frozen | (np.abs(coef) < eps)
    newly = zero & ~frozen
    out = np.where(zero, 0.0, coef)

    all_zero = zero.all(axis=0)
    if all_zero.any():
        # prefer forcing c = eps; a coefficient frozen earlier is never revived
        for j in np.nonzero(all_zero)[0]:
            if not frozen[2, j]:
                k, value = 2, eps
            else:
                k = 1 if newly[1, j] else 0
                value = math.copysign(eps, coef[k, j]) if coef[k, j] != 0 else eps
            out[k, j] = value
            zero[k, j] = False

    pattern = 4 * zero[0] + 2 * zero[1] + zero[2]
    structural = _PATTERN_TABLE[pattern].astype(np.int8)

    regime = np.full(structural.shape, Regime.NOT_APPLICABLE, dtype=np.int8)
    ra, rb, rc = out
    full = structural == Structural.FULL
    if full.any():
        disc = rb * rb - 4.0 * ra * rc
        ac_pos = ra * rc > 0
        crit = full & (np.abs(disc) < eps) & ac_pos
        rb = np.where(crit, np.copysign(np.sqrt(np.where(crit, 4.0 * ra * rc, 0.0)), rb), rb)
        out[1] = rb
        regime[full] = Regime.OVERDAMPED
        regime[full & (disc <= -eps)] = Regime.UNDERDAMPED
        regime[crit] = Regime.CRITICAL
    nodamp = structural == Structural.NO_DAMPING
    if nodamp.any():
        regime[nodamp & (ra * rc > 0)] = Regime.OSCILLATORY
        regime[nodamp & ~(ra * rc > 0)] = Regime.HYPERBOLIC

    return out[0], out[1], out[2], zero, structural, regime


def resolve_subspace(p: DeuParams, cfg: KernelConfig) -> tuple[DeuParams, SubspaceId]:
    """Project near-zero coefficients onto their singular subspace and classify."""
    a, b, c, frozen, s, r = resolve_arrays(
        [p.a], [p.b], [p.c], [[p.frozen_a], [p.frozen_b], [p.frozen_c]], cfg
    )
    resolved = replace(
        p,
        a=float(a[0]), b=float(b[0]), c=float(c[0]),
        frozen_a=bool(frozen[0, 0]), frozen_b=bool(frozen[1, 0]), frozen_c=bool(frozen[2, 0]),
    )
    return resolved, SubspaceId(Structural(int(s[0])), Regime(int(r[0])))


# ---------------------------------------------------------------------------
# closed forms

_INV_EVEN_FACT = [1.0 / math.factorial(2 * k) for k in range(14)]
_INV_ODD_FACT = [1.0 / math.factorial(2 * k + 1) for k in range(14)]
# x + expm1(-x) = x^2/2 - x^3/6 + ...
_RAMP_SERIES = [0.0, 0.0] + [(-1.0) ** k / math.factorial(k) for k in range(2, 18)]


def _expm1(x: Dual, clamp: float) -> Dual:
    arg = np.clip(x.v, -clamp, clamp)
    inside = np.abs(x.v) <= clamp
    return Dual(np.expm1(arg), np.where(inside, x.d * np.exp(arg), 0.0))


def _ramp(x: Dual, clamp: float) -> Dual:
    """x - 1 + exp(-x), accurate near x = 0."""
    small = np.abs(x.v) < 0.1
    xs = x.where(small, 0.0)
    xl = x.where(~small, 1.0)
    series = dual.polyval(_RAMP_SERIES, xs)
    direct = xl + _expm1(-xl, clamp)
    return series.where(small, direct)


def _step_response(s: int, r: int, t: Dual, a: Dual, b: Dual, c: Dual, clamp: float) -> Dual:
    """Zero-initial-condition response to a unit step, for t >= 0."""
    if s == Structural.FULL:
        if r == Regime.OVERDAMPED:
            r1, r2 = _real_roots(a, b, c)
            num = r2 * _expm1(r1 * t, clamp) - r1 * _expm1(r2 * t, clamp)
            return num / (r1 - r2) / c
        sigma = -b / (2.0 * a)
        if r == Regime.UNDERDAMPED:
            omega = dual.sqrt(4.0 * a * c - b * b) / (2.0 * a)
            wt = omega * t
            osc = dual.cos(wt) - sigma / omega * dual.sin(wt)
            return (1.0 - dual.exp(sigma * t, clamp) * osc) / c
        # critical: entire-function form, valid on both sides of b^2 = 4ac
        x = (b * b - 4.0 * a * c) / (4.0 * a * a) * t * t
        ch = dual.polyval(_INV_EVEN_FACT, x)
        sh = dual.polyval(_INV_ODD_FACT, x)
        return (1.0 - dual.exp(sigma * t, clamp) * (ch - sigma * t * sh)) / c
    if s == Structural.NO_DAMPING:
        if r == Regime.OSCILLATORY:
            half = dual.sin(dual.sqrt(c / a) * t * 0.5)
            return 2.0 * half * half / c
        half = dual.sinh(dual.sqrt(-c / a) * t * 0.5, clamp)
        return -2.0 * half * half / c
    if s == Structural.NO_STIFFNESS:
        return a / (b * b) * _ramp(b / a * t, clamp)
    if s == Structural.NO_MASS:
        return -_expm1(-(c / b) * t, clamp) / c
    if s == Structural.MASS_ONLY:
        return t * t / (2.0 * a)
    if s == Structural.DAMPING_ONLY:
        return t / b
    return 1.0 / c + 0.0 * t


def _real_roots(a: Dual, b: Dual, c: Dual) -> tuple[Dual, Dual]:
    sq = dual.sqrt(b * b - 4.0 * a * c)
    q = -0.5 * (b + sq * np.where(b.v >= 0, 1.0, -1.0))
    ra = q / a
    rb = c / q
    hi = ra.v >= rb.v
    return ra.where(hi, rb), rb.where(hi, ra)


def _basis(s: int, r: int, t: Dual, a: Dual, b: Dual, c: Dual, clamp: float) -> tuple[Dual, Dual]:
    zero = 0.0 * t
    if s == Structural.FULL:
        if r == Regime.OVERDAMPED:
            r1, r2 = _real_roots(a, b, c)
            return dual.exp(r1 * t, clamp), dual.exp(r2 * t, clamp)
        sigma = -b / (2.0 * a)
        env = dual.exp(sigma * t, clamp)
        if r == Regime.UNDERDAMPED:
            wt = dual.sqrt(4.0 * a * c - b * b) / (2.0 * a) * t
            return env * dual.cos(wt), env * dual.sin(wt)
        return env, t * env
    if s == Structural.NO_DAMPING:
        if r == Regime.OSCILLATORY:
            wt = dual.sqrt(c / a) * t
            return dual.cos(wt), dual.sin(wt)
        kt = dual.sqrt(-c / a) * t
        return dual.cosh(kt, clamp), dual.sinh(kt, clamp)
    if s == Structural.NO_STIFFNESS:
        return zero + 1.0, dual.exp(-(b / a) * t, clamp)
    if s == Structural.NO_MASS:
        return dual.exp(-(c / b) * t, clamp), zero
    if s == Structural.MASS_ONLY:
        return t, zero + 1.0
    if s == Structural.DAMPING_ONLY:
        return zero + 1.0, zero
    return zero, zero


def _check_resolved(a, b, c, structural, cfg: KernelConfig) -> None:
    coef = np.stack([a, b, c])
    if not np.all(np.isfinite(coef)):
        raise InvalidParameterError("non-finite coefficient")
    mag = np.abs(coef)
    if np.any((mag > 0) & (mag < cfg.epsilon)):
        raise ContractViolation("coefficient in (0, epsilon); call resolve_subspace first")
    pattern = 4 * (coef[0] == 0) + 2 * (coef[1] == 0) + (coef[2] == 0)
    if np.any(_PATTERN_TABLE[pattern] != structural):
        raise ContractViolation("structural subspace does not match the zero pattern of (a, b, c)")


def evaluate_arrays(a, b, c, c1, c2, structural, regime, t, cfg: KernelConfig,
                    frozen=None, check: bool = True) -> EvalGrid:
    """Elementwise evaluation; all array arguments broadcast against ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("non-finite pre-activation")
    shape = t.shape
    arrs = [np.broadcast_to(np.asarray(x), shape).ravel()
            for x in (a, b, c, c1, c2, structural, regime)]
    a, b, c, c1, c2, structural, regime = arrs
    a, b, c, c1, c2 = (x.astype(np.float64, copy=False) for x in (a, b, c, c1, c2))
    structural = structural.astype(np.int64)
    regime = regime.astype(np.int64)
    if check:
        _check_resolved(a, b, c, structural, cfg)
    tf = t.ravel()

    out = {f: np.empty(tf.shape) for f in FIELDS}
    code = structural * 8 + regime
    clamp = cfg.exp_arg_clamp
    for k in np.unique(code):
        idx = np.nonzero(code == k)[0]
        s, r = divmod(int(k), 8)
        ti = tf[idx]
        tv = Dual.variable(ti, 0, 4)
        av = Dual.variable(a[idx], 1, 4)
        bv = Dual.variable(b[idx], 2, 4)
        cv = Dual.variable(c[idx], 3, 4)
        pos = ti > 0
        tp = tv.where(pos, 0.0)
        with np.errstate(all="ignore"):
            f = _step_response(s, r, tp, av, bv, cv, clamp).where(pos, 0.0)
            f1, f2 = _basis(s, r, tv, av, bv, cv, clamp)
            y = f + f1 * c1[idx] + f2 * c2[idx]
        out["y"][idx] = y.v
        for j, name in enumerate(("dy_dt", "dy_da", "dy_db", "dy_dc")):
            out[name][idx] = y.d[j]
        out["dy_dc1"][idx] = f1.v
        out["dy_dc2"][idx] = f2.v

    lim = cfg.output_clamp
    for name in FIELDS:
        np.clip(out[name], -lim, lim, out=out[name])
        np.nan_to_num(out[name], copy=False, nan=0.0)
    if frozen is not None:
        frozen = np.asarray(frozen, dtype=bool)
        for j, name in enumerate(("dy_da", "dy_db", "dy_dc")):
            mask = np.broadcast_to(frozen[j], shape).ravel()
            out[name][mask] = 0.0
    return EvalGrid(**{k: v.reshape(shape) for k, v in out.items()})


def eval(p: DeuParams, sid: SubspaceId, t: float, cfg: KernelConfig) -> EvalResult:  # noqa: A001
    """Value and the six partials of one DEU at pre-activation ``t``."""
    if not math.isfinite(t):
        raise InvalidInputError(f"non-finite pre-activation {t}")
    grid = evaluate_arrays(
        p.a, p.b, p.c, p.c1, p.c2, int(sid.structural), int(sid.regime),
        np.array([t], dtype=np.float64), cfg,
        frozen=[p.frozen_a, p.frozen_b, p.frozen_c],
    )
    return grid.at(0)


def homogeneous_basis(p: DeuParams, sid: SubspaceId, t: float, cfg: KernelConfig) -> tuple[float, float]:
    r = eval(p, sid, t, cfg)
    return r.dy_dc1, r.dy_dc2


# ---------------------------------------------------------------------------
# per-layer parameter bank


@dataclass
class DeuBank:
    """Structure-of-arrays DEU parameters for one layer (one entry per neuron)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    frozen: np.ndarray  # (3, n) bool for a, b, c
    structural: np.ndarray
    regime: np.ndarray

    def __len__(self) -> int:
        return self.a.shape[0]

    @classmethod
    def from_params(cls, params: Sequence[DeuParams], cfg: KernelConfig) -> "DeuBank":
        bank = cls(
            a=np.array([p.a for p in params], dtype=np.float64),
            b=np.array([p.b for p in params], dtype=np.float64),
            c=np.array([p.c for p in params], dtype=np.float64),
            c1=np.array([p.c1 for p in params], dtype=np.float64),
            c2=np.array([p.c2 for p in params], dtype=np.float64),
            frozen=np.array([[p.frozen_a for p in params], [p.frozen_b for p in params],
                             [p.frozen_c for p in params]], dtype=bool).reshape(3, -1),
            structural=np.zeros(len(params), dtype=np.int8),
            regime=np.zeros(len(params), dtype=np.int8),
        )
        bank.resolve(cfg)
        return bank

    def resolve(self, cfg: KernelConfig) -> None:
        self.a, self.b, self.c, self.frozen, self.structural, self.regime = resolve_arrays(
            self.a, self.b, self.c, self.frozen, cfg
        )

    def params(self, i: int) -> DeuParams:
        return DeuParams(float(self.a[i]), float(self.b[i]), float(self.c[i]),
                         float(self.c1[i]), float(self.c2[i]),
                         bool(self.frozen[0, i]), bool(self.frozen[1, i]), bool(self.frozen[2, i]))

    def subspace(self, i: int) -> SubspaceId:
        return SubspaceId(Structural(int(self.structural[i])), Regime(int(self.regime[i])))

    def coefficients(self) -> np.ndarray:
        return np.stack([self.a, self.b, self.c, self.c1, self.c2], axis=1)

    def copy(self) -> "DeuBank":
        return DeuBank(*(np.array(getattr(self, f)) for f in self.__dataclass_fields__))


def eval_batch(params, ts, cfg: KernelConfig) -> EvalGrid:
    """Evaluate one DEU per column of ``ts`` (shape ``(rows, n)``).

    ``params`` is either a :class:`DeuBank` or a sequence of
    ``(DeuParams, SubspaceId)`` pairs, one per column.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 2:
        raise ValueError(f"expected a 2-D array of pre-activations, got shape {ts.shape}")
    if isinstance(params, DeuBank):
        bank = params
        if len(bank) != ts.shape[1]:
            raise ValueError(f"{len(bank)} neurons for {ts.shape[1]} columns")
        return evaluate_arrays(bank.a, bank.b, bank.c, bank.c1, bank.c2,
                               bank.structural, bank.regime, ts, cfg, frozen=bank.frozen)
    params = list(params)
    if len(params) != ts.shape[1]:
        raise ValueError(f"{len(params)} neurons for {ts.shape[1]} columns")
    cols = [np.array([getattr(p, f) for p, _ in params], dtype=np.float64)
            for f in ("a", "b", "c", "c1", "c2")]
    frozen = np.array([[p.frozen_a for p, _ in params], [p.frozen_b for p, _ in params],
                       [p.frozen_c for p, _ in params]], dtype=bool)
    s = np.array([int(sid.structural) for _, sid in params])
    r = np.array([int(sid.regime) for _, sid in params])
    return evaluate_arrays(*cols, s, r, ts, cfg, frozen=frozen)
