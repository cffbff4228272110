"""Vectorized forward-mode dual numbers.

A :class:`Dual` carries a value array ``v`` and a stack of tangent arrays
``d`` (shape ``(k, *v.shape)``), one per independent variable. Closed-form
activation formulas written against this type yield exact partials with
respect to every seeded variable in a single pass.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v
        self.d = d

    @classmethod
    def variable(cls, value, index: int, nvars: int) -> "Dual":
        value = np.asarray(value, dtype=np.float64)
        d = np.zeros((nvars,) + value.shape)
        d[index] = 1.0
        return cls(value, d)

    @classmethod
    def constant(cls, value, nvars: int) -> "Dual":
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.zeros((nvars,) + value.shape))

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual.constant(np.broadcast_to(np.asarray(other, dtype=np.float64), self.v.shape), self.d.shape[0])

    def __add__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.v + other, self.d)
        return Dual(self.v + other.v, self.d + other.d)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.v - other, self.d)
        return Dual(self.v - other.v, self.d - other.d)

    def __rsub__(self, other):
        return Dual(other - self.v, -self.d)

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __mul__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.v * other, self.d * other)
        return Dual(self.v * other.v, self.d * other.v + self.v * other.d)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.v / other, self.d / other)
        q = self.v / other.v
        return Dual(q, (self.d - q * other.d) / other.v)

    def __rtruediv__(self, other):
        q = other / self.v
        return Dual(q, -q * self.d / self.v)

    def where(self, mask, other) -> "Dual":
        other = self._lift(other)
        return Dual(np.where(mask, self.v, other.v), np.where(mask, self.d, other.d))

    def __repr__(self) -> str:
        return f"Dual(v={self.v!r}, d={self.d!r})"


def sqrt(x: Dual) -> Dual:
    r = np.sqrt(x.v)
    return Dual(r, x.d / (2.0 * r))


def exp(x: Dual, clamp: float = np.inf) -> Dual:
    """exp with the argument clipped to [-clamp, clamp]; the tangent is zero where clipped."""
    arg = np.clip(x.v, -clamp, clamp)
    e = np.exp(arg)
    inside = np.abs(x.v) <= clamp
    return Dual(e, np.where(inside, x.d * e, 0.0))


def sin(x: Dual) -> Dual:
    return Dual(np.sin(x.v), x.d * np.cos(x.v))


def cos(x: Dual) -> Dual:
    return Dual(np.cos(x.v), -x.d * np.sin(x.v))


def cosh(x: Dual, clamp: float = np.inf) -> Dual:
    arg = np.clip(x.v, -clamp, clamp)
    inside = np.abs(x.v) <= clamp
    return Dual(np.cosh(arg), np.where(inside, x.d * np.sinh(arg), 0.0))


def sinh(x: Dual, clamp: float = np.inf) -> Dual:
    arg = np.clip(x.v, -clamp, clamp)
    inside = np.abs(x.v) <= clamp
    return Dual(np.sinh(arg), np.where(inside, x.d * np.cosh(arg), 0.0))


def polyval(coeffs, x: Dual) -> Dual:
    """Horner evaluation of sum(coeffs[k] * x**k)."""
    acc = Dual.constant(np.full(x.v.shape, coeffs[-1]), x.d.shape[0])
    for ck in coeffs[-2::-1]:
        acc = acc * x + ck
    return acc
