"""Kernel certification: ODE residuals, RK4 agreement and gradient checks.

Draws are spread round-robin over the ten (structural, regime) cells and kept
at least ``10 * epsilon`` away from every subspace and discriminant boundary.
Draws whose values would hit the exponent or output clamp somewhere on
[-3, 3] are rejected and redrawn; the clamps deliberately break the ODE
there, so such draws say nothing about the closed forms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kernel import (ALL_SUBSPACES, FIELDS, KernelConfig, Regime, Structural, SubspaceId,
                     evaluate_arrays, resolve_arrays)
from .oracle import Evaluator, integrate_many, scaled_residuals

RESIDUAL_TOL = 1e-3
RK4_TOL = 1e-5
GRAD_TOL = 1e-4
T_RANGE = 3.0
RK4_STEP = 1e-4
RECORD_EVERY = 250          # grid spacing 0.025
FD_STEP = 1e-4              # 5-point stencil for gradient checks
GRAD_PARAMS = ("t", "a", "b", "c", "c1", "c2")

# wide clamps used only to detect whether the default ones engaged
_WIDE = KernelConfig(epsilon=1e-3, exp_arg_clamp=700.0, output_clamp=1e300)


@dataclass
class Draws:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    structural: np.ndarray
    regime: np.ndarray
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.a)

    def take(self, idx) -> "Draws":
        return Draws(*(getattr(self, f)[idx] for f in ("a", "b", "c", "c1", "c2",
                                                        "structural", "regime")))

    def args(self):
        return (self.a, self.b, self.c, self.c1, self.c2, self.structural, self.regime)


def _magnitude(rng, n, lo, hi=2.0):
    return lo + (hi - lo) * (1.0 - rng.random(n))


def _signed(rng, n, lo, hi=2.0):
    return _magnitude(rng, n, lo, hi) * rng.choice([-1.0, 1.0], n)


def _candidates(sid: SubspaceId, n: int, rng, cfg: KernelConfig):
    margin = 10 * cfg.epsilon
    zero = np.zeros(n)
    s, r = sid
    a, b, c = _signed(rng, n, margin), _signed(rng, n, margin), _signed(rng, n, margin)
    if s == Structural.FULL:
        if r == Regime.CRITICAL:
            c = np.abs(c) * np.sign(a)
            b = np.sign(b) * np.sqrt(4 * a * c)
            keep = np.abs(b) > margin
        else:
            disc = b * b - 4 * a * c
            keep = disc > margin if r == Regime.OVERDAMPED else disc < -margin
    elif s == Structural.NO_DAMPING:
        b = zero
        c = np.abs(c) * np.sign(a) * (1 if r == Regime.OSCILLATORY else -1)
        keep = np.ones(n, bool)
    else:
        if s in (Structural.NO_STIFFNESS, Structural.MASS_ONLY, Structural.DAMPING_ONLY):
            c = zero
        if s in (Structural.NO_MASS, Structural.DAMPING_ONLY, Structural.STIFFNESS_ONLY):
            a = zero
        if s in (Structural.MASS_ONLY, Structural.STIFFNESS_ONLY):
            b = zero
        keep = np.ones(n, bool)
    c1 = rng.uniform(-1, 1, n)
    c2 = rng.uniform(-1, 1, n)
    return a[keep], b[keep], c[keep], c1[keep], c2[keep]


def check_grid() -> np.ndarray:
    times = -T_RANGE + np.arange(0, 2 * T_RANGE / (RK4_STEP * RECORD_EVERY) + 1) * RK4_STEP * RECORD_EVERY
    return times


def residual_grid() -> np.ndarray:
    g = check_grid()
    return g[np.abs(g) >= 0.05 - 1e-9]


def _unclamped(a, b, c, c1, c2, s, r, cfg: KernelConfig) -> np.ndarray:
    t = np.concatenate([check_grid(), residual_grid() + FD_STEP * 2, residual_grid() - FD_STEP * 2])
    args = [x[:, None] for x in (a, b, c, c1, c2, s, r)]
    tt = np.broadcast_to(t[None, :], (len(a), len(t)))
    narrow = evaluate_arrays(*args, tt, cfg)
    wide = evaluate_arrays(*args, tt, _WIDE)
    ok = np.ones(len(a), bool)
    for f in FIELDS:
        nv, wv = getattr(narrow, f), getattr(wide, f)
        ok &= np.all(nv == wv, axis=1) & np.all(np.abs(wv) < cfg.output_clamp, axis=1)
    return ok


def sample_draws(n: int, seed: int, cfg: KernelConfig = KernelConfig(),
                 subspaces=ALL_SUBSPACES) -> Draws:
    """Seeded, boundary-avoiding, clamp-free draws, round-robin over ``subspaces``."""
    rng = np.random.default_rng(seed)
    per = [n // len(subspaces) + (i < n % len(subspaces)) for i in range(len(subspaces))]
    parts = []
    rejected = 0
    for sid, need in zip(subspaces, per):
        got = [np.empty(0)] * 5
        while len(got[0]) < need:
            cand = _candidates(sid, max(4 * need, 16), rng, cfg)
            ra, rb, rc, _, s, r = resolve_arrays(cand[0], cand[1], cand[2],
                                                 np.zeros((3, len(cand[0])), bool), cfg)
            cand = (ra, rb, rc, cand[3], cand[4])
            match = (s == sid.structural) & (r == sid.regime)
            ok = match.copy()
            ok[match] = _unclamped(*(x[match] for x in cand), s[match], r[match], cfg)
            rejected += int((~ok).sum())
            got = [np.concatenate([g, x[ok]]) for g, x in zip(got, cand)]
        got = [g[:need] for g in got]
        parts.append(got + [np.full(need, sid.structural, np.int8), np.full(need, sid.regime, np.int8)])
    cols = [np.concatenate([p[i] for p in parts]) for i in range(7)]
    return Draws(*cols, rejected=rejected)


def rk4_errors(d: Draws, cfg: KernelConfig, evaluator: Evaluator = evaluate_arrays):
    """Scaled |rk4 - closed form| / max(1, |y|) on the check grid, shape (draws, grid)."""
    grid = check_grid()
    args = [x[:, None] for x in d.args()]
    start = evaluator(*args, np.full((len(d), 1), -T_RANGE), cfg)
    times, ys = integrate_many(d.a, d.b, d.c, start.y[:, 0], start.dy_dt[:, 0],
                               -T_RANGE, T_RANGE, RK4_STEP, RECORD_EVERY)
    closed = evaluator(*args, np.broadcast_to(times[None, :], ys.shape), cfg)
    return np.abs(ys - closed.y) / np.maximum(1.0, np.abs(closed.y))


def _shifted(d: Draws, t: np.ndarray, name: str, delta: float):
    args = {k: v[:, None] for k, v in zip(("a", "b", "c", "c1", "c2", "s", "r"), d.args())}
    tt = t
    if name == "t":
        tt = t + delta
    else:
        args[name] = args[name] + delta
    return (args["a"], args["b"], args["c"], args["c1"], args["c2"], args["s"], args["r"]), tt


def _five_point(d: Draws, t: np.ndarray, name: str, h: float, cfg, evaluator) -> np.ndarray:
    vals = {}
    for k in (-2, -1, 1, 2):
        args, tt = _shifted(d, t, name, k * h)
        vals[k] = evaluator(*args, tt, cfg, check=False).y
    return (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * h)


def gradient_errors(d: Draws, cfg: KernelConfig, evaluator: Evaluator = evaluate_arrays,
                    grid: np.ndarray | None = None, step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Per-partial errors ``|analytic - fd| / max(1, |analytic|)`` with a 5-point stencil.

    Points that miss the tolerance at ``step`` are re-measured at ``step / 4``
    and keep the smaller error: fast oscillations (small ``a``) leave a
    truncation error at the coarse step that says nothing about the analytic
    partial, while a wrong partial misses at both steps.
    """
    if grid is None:
        grid = residual_grid()[::2]
    t = np.broadcast_to(grid[None, :], (len(d), len(grid)))
    base = evaluator(*(x[:, None] for x in d.args()), t, cfg)
    errs = {}
    for name in GRAD_PARAMS:
        an = getattr(base, f"dy_d{name}")
        scale = np.maximum(1.0, np.abs(an))
        err = np.abs(an - _five_point(d, t, name, step, cfg, evaluator)) / scale
        if np.any(err >= GRAD_TOL):
            fine = np.abs(an - _five_point(d, t, name, step / 4, cfg, evaluator)) / scale
            err = np.minimum(err, fine)
        errs[name] = err
    return errs


@dataclass
class SubspaceReport:
    subspace: str
    draws: int
    residual: float
    rk4: float
    gradient: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.residual < RESIDUAL_TOL and self.rk4 < RK4_TOL
                and all(v < GRAD_TOL for v in self.gradient.values()))


@dataclass
class KernelReport:
    draws: int
    seed: int
    rejected: int
    seconds: float
    subspaces: list[SubspaceReport]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.subspaces)

    def lines(self) -> list[str]:
        out = [f"verify-kernel draws={self.draws} seed={self.seed} rejected={self.rejected}"]
        for s in self.subspaces:
            worst = max(s.gradient, key=s.gradient.get) if s.gradient else "-"
            g = s.gradient.get(worst, 0.0)
            out.append(
                f"{s.subspace:<28} draws={s.draws:<4d} residual={s.residual:.3e} "
                f"rk4={s.rk4:.3e} grad={g:.3e} ({worst}) {'PASS' if s.passed else 'FAIL'}"
            )
        out.append(f"result={'PASS' if self.passed else 'FAIL'}")
        return out

    def as_dict(self) -> dict:
        return {
            "draws": self.draws, "seed": self.seed, "rejected": self.rejected,
            "passed": self.passed,
            "subspaces": [
                {"subspace": s.subspace, "draws": s.draws, "residual": s.residual,
                 "rk4": s.rk4, "gradient": s.gradient, "passed": s.passed}
                for s in self.subspaces
            ],
        }


def verify_kernel(draws: int = 1000, seed: int = 0, cfg: KernelConfig = KernelConfig(),
                  evaluator: Evaluator = evaluate_arrays, checks=("residual", "rk4", "gradient")
                  ) -> KernelReport:
    start = time.perf_counter()
    d = sample_draws(draws, seed, cfg)
    res = rk4 = None
    if "residual" in checks:
        res = scaled_residuals(*d.args(), residual_grid(), cfg, evaluator=evaluator).max(axis=1)
    if "rk4" in checks:
        rk4 = rk4_errors(d, cfg, evaluator).max(axis=1)
    grads = gradient_errors(d, cfg, evaluator) if "gradient" in checks else {}
    grads = {k: v.max(axis=1) for k, v in grads.items()}

    reports = []
    for sid in ALL_SUBSPACES:
        m = (d.structural == sid.structural) & (d.regime == sid.regime)
        if not m.any():
            continue
        reports.append(SubspaceReport(
            subspace=str(sid),
            draws=int(m.sum()),
            residual=float(res[m].max()) if res is not None else 0.0,
            rk4=float(rk4[m].max()) if rk4 is not None else 0.0,
            gradient={k: float(v[m].max()) for k, v in grads.items()},
        ))
    return KernelReport(draws, seed, d.rejected, time.perf_counter() - start, reports)
