"""Numerical reference solutions for the DEU ODE.

Nothing here is used during training. The integrator is a plain RK4 on
``(y, y')`` with the step forcing held constant over each step, which is exact
as long as ``t = 0`` falls on a step boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernel import DeuParams, EvalGrid, KernelConfig, SubspaceId, evaluate_arrays


class InvalidSpecError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, t: float):
        super().__init__(f"integration diverged at t={t!r}")
        self.t = t


@dataclass(frozen=True)
class IvpSpec:
    a: float
    b: float
    c: float
    t0: float
    y0: float
    yprime0: float
    t_end: float
    step: float


def _grid(t0: float, t_end: float, step: float) -> tuple[int, float, int | None]:
    if not step > 0:
        raise InvalidSpecError(f"step must be positive, got {step}")
    if not t_end > t0:
        raise InvalidSpecError("t_end must exceed t0")
    n = math.ceil((t_end - t0) / step - 1e-9)
    h = (t_end - t0) / n
    k0 = None
    if t0 < 0 < t_end:
        k0 = round(-t0 / h)
        if abs(k0 * h + t0) > 1e-9 * max(1.0, abs(t0)):
            raise InvalidSpecError(f"t=0 does not fall on a step boundary (t0={t0}, step={h})")
    return n, h, k0


def integrate_many(a, b, c, y0, yprime0, t0: float, t_end: float, step: float,
                   record_every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for a batch of IVPs sharing one time grid.

    Returns ``(times, ys)`` with ``ys`` of shape ``(batch, len(times))``. Rows
    with ``a == 0`` are integrated as first-order problems (``yprime0`` is
    ignored); rows with ``a == b == 0`` get the algebraic solution ``u(t)/c``.
    """
    a, b, c, y, v = (np.array(x, dtype=np.float64, ndmin=1) for x in (a, b, c, y0, yprime0))
    n, h, k0 = _grid(t0, t_end, step)
    second = a != 0
    first = ~second & (b != 0)
    algebraic = ~second & ~first
    if np.any(algebraic & (c == 0)):
        raise InvalidSpecError("a, b and c are all zero")
    inv_a = np.where(second, 1.0 / np.where(second, a, 1.0), 0.0)
    inv_b = np.where(first, 1.0 / np.where(first, b, 1.0), 0.0)

    def deriv(y, v, u):
        dy = np.where(second, v, (u - c * y) * inv_b)
        dv = (u - b * v - c * y) * inv_a
        return dy, dv

    steps = np.arange(0, n + 1, record_every)
    if steps[-1] != n:
        steps = np.append(steps, n)
    times = t0 + steps * h
    if k0 is not None:
        times[steps == k0] = 0.0
    times[-1] = t_end
    out = np.empty((y.shape[0], steps.shape[0]))
    out[:, 0] = y
    col = 1
    # overflow is reported as DivergenceError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            # forcing over (t_k, t_k + h]
            if k0 is not None:
                u = 1.0 if k >= k0 else 0.0
            else:
                u = 1.0 if t0 >= 0 else 0.0
            k1y, k1v = deriv(y, v, u)
            k2y, k2v = deriv(y + 0.5 * h * k1y, v + 0.5 * h * k1v, u)
            k3y, k3v = deriv(y + 0.5 * h * k2y, v + 0.5 * h * k2v, u)
            k4y, k4v = deriv(y + h * k3y, v + h * k3v, u)
            y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            if not np.all(np.isfinite(y[~algebraic])):
                raise DivergenceError(t0 + (k + 1) * h)
            if col < steps.shape[0] and steps[col] == k + 1:
                out[:, col] = y
                col += 1
    if algebraic.any():
        u_t = (times > 0).astype(np.float64)
        out[algebraic] = u_t[None, :] / c[algebraic, None]
    return times, out


def integrate(spec: IvpSpec, record_every: int = 1) -> list[tuple[float, float]]:
    """Integrate one IVP; returns ``(t, y)`` pairs along the grid."""
    times, ys = integrate_many(spec.a, spec.b, spec.c, spec.y0, spec.yprime0,
                               spec.t0, spec.t_end, spec.step, record_every)
    return list(zip(times.tolist(), ys[0].tolist()))


Evaluator = Callable[..., EvalGrid]


def residual_scan(p: DeuParams, sid: SubspaceId, grid: Sequence[float], cfg: KernelConfig,
                  fd_step: float = 1e-5, evaluator: Evaluator = evaluate_arrays) -> float:
    """Largest scaled ODE residual ``|a y'' + b y' + c y - u| / max(1, |y|)`` on ``grid``.

    ``y'`` is the analytic ``dy_dt``; ``y''`` is its central difference.
    ``evaluator`` defaults to the production kernel and exists so tests can
    feed a corrupted one.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.abs(grid) < 10 * fd_step):
        raise ValueError("grid must stay at least 10 finite-difference steps away from t=0")
    res = scaled_residuals(np.array([p.a]), np.array([p.b]), np.array([p.c]),
                           np.array([p.c1]), np.array([p.c2]),
                           np.array([int(sid.structural)]), np.array([int(sid.regime)]),
                           grid, cfg, fd_step, evaluator)
    return float(res.max())


def scaled_residuals(a, b, c, c1, c2, structural, regime, grid, cfg: KernelConfig,
                     fd_step: float = 1e-5, evaluator: Evaluator = evaluate_arrays) -> np.ndarray:
    """Scaled residuals for a batch of draws; returns shape ``(draws, len(grid))``."""
    col = lambda x: np.asarray(x)[:, None]  # noqa: E731
    args = [col(x) for x in (a, b, c, c1, c2, structural, regime)]
    t = np.broadcast_to(np.asarray(grid, dtype=np.float64)[None, :], (len(a), len(grid)))
    mid = evaluator(*args, t, cfg)
    hi = evaluator(*args, t + fd_step, cfg)
    lo = evaluator(*args, t - fd_step, cfg)
    ypp = (hi.dy_dt - lo.dy_dt) / (2.0 * fd_step)
    u = (t > 0).astype(np.float64)
    r = args[0] * ypp + args[1] * mid.dy_dt + args[2] * mid.y - u
    return np.abs(r) / np.maximum(1.0, np.abs(mid.y))
