"""Scalar fields on the real line with first and second derivatives.

Two implementations share the :class:`SmoothField` interface:

* :class:`Poly` -- exact polynomial arithmetic on an ascending coefficient
  vector (sums, products, powers and derivatives are exact).
* :class:`Field` -- a generic triple of callables ``(value, d1, d2)``;
  missing derivatives fall back to central differences.

Mixing the two in arithmetic gives a :class:`Field` whose derivatives follow
the sum and product rules. All evaluators accept scalars or numpy arrays.
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

ArrayFn = Callable[[np.ndarray], np.ndarray]

_FD_STEP = 1e-4


class SmoothField:
    """Interface: ``f(x)``, ``f.d1(x)``, ``f.d2(x)`` and ``f.deriv()``."""

    def __call__(self, x):
        raise NotImplementedError

    def d1(self, x):
        raise NotImplementedError

    def d2(self, x):
        raise NotImplementedError

    def deriv(self) -> "SmoothField":
        raise NotImplementedError

    # generic arithmetic, overridden by Poly when both operands are polynomial
    def __add__(self, other):
        o = as_field(other)
        return Field(
            lambda x: self(x) + o(x),
            lambda x: self.d1(x) + o.d1(x),
            lambda x: self.d2(x) + o.d2(x),
        )

    __radd__ = __add__

    def __neg__(self):
        return Field(lambda x: -self(x), lambda x: -self.d1(x), lambda x: -self.d2(x))

    def __sub__(self, other):
        return self + (-as_field(other))

    def __rsub__(self, other):
        return as_field(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, Real):
            c = float(other)
            return Field(lambda x: c * self(x), lambda x: c * self.d1(x), lambda x: c * self.d2(x))
        o = as_field(other)
        return Field(
            lambda x: self(x) * o(x),
            lambda x: self.d1(x) * o(x) + self(x) * o.d1(x),
            lambda x: self.d2(x) * o(x) + 2.0 * self.d1(x) * o.d1(x) + self(x) * o.d2(x),
        )

    __rmul__ = __mul__


class Field(SmoothField):
    """Generic smooth field from callables.

    Parameters
    ----------
    f : callable
        Vectorised value ``x -> f(x)``.
    df, d2f : callable, optional
        First and second derivatives. When omitted they are approximated by
        central differences of the next lower derivative.
    """

    def __init__(self, f: ArrayFn, df: ArrayFn | None = None, d2f: ArrayFn | None = None):
        self._f = f
        self._df = df
        self._d2f = d2f

    def __call__(self, x):
        return self._f(np.asarray(x, dtype=float))

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        if self._df is not None:
            return self._df(x)
        h = _FD_STEP * np.maximum(1.0, np.abs(x))
        return (self._f(x + h) - self._f(x - h)) / (2.0 * h)

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        if self._d2f is not None:
            return self._d2f(x)
        h = _FD_STEP * np.maximum(1.0, np.abs(x))
        return (self.d1(x + h) - self.d1(x - h)) / (2.0 * h)

    def deriv(self) -> "Field":
        return Field(self.d1, self.d2)


class Poly(SmoothField):
    """Real polynomial with ascending coefficients ``c[0] + c[1] x + ...``.

    >>> p = Poly([0, 0, 1])          # x**2
    >>> (p * p - 1).coef.tolist()
    [-1.0, 0.0, 0.0, 0.0, 1.0]
    >>> p.deriv().coef.tolist()
    [0.0, 2.0]
    """

    __array_priority__ = 100  # keep numpy scalars from broadcasting over us

    def __init__(self, coef: Sequence[float] | np.ndarray):
        c = np.atleast_1d(np.asarray(coef, dtype=float)).copy()
        if c.ndim != 1:
            raise ValueError("polynomial coefficients must be a 1-d sequence")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        c.setflags(write=False)
        self._c = c

    # construction helpers
    @classmethod
    def const(cls, value: float) -> "Poly":
        return cls([value])

    @classmethod
    def x(cls) -> "Poly":
        return cls([0.0, 1.0])

    @classmethod
    def monomial(cls, k: int, scale: float = 1.0) -> "Poly":
        c = np.zeros(k + 1)
        c[k] = scale
        return cls(c)

    @property
    def coef(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        """Degree; the zero polynomial has degree -1."""
        if self._c.size == 1 and self._c[0] == 0.0:
            return -1
        return self._c.size - 1

    @property
    def leading(self) -> float:
        return float(self._c[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self._c
        y = np.full(x.shape, c[-1])
        for ck in c[-2::-1]:  # Horner
            y = y * x + ck
        return y

    def d1(self, x):
        return self.deriv()(x)

    def d2(self, x):
        return self.deriv().deriv()(x)

    def deriv(self) -> "Poly":
        d = self.__dict__.get("_deriv")
        if d is None:
            c = self._c
            d = Poly([0.0]) if c.size == 1 else Poly(c[1:] * np.arange(1, c.size))
            self.__dict__["_deriv"] = d
        return d

    def antideriv(self) -> "Poly":
        return Poly(npoly.polyint(self._c))

    def __add__(self, other):
        if isinstance(other, Real):
            other = Poly([other])
        if isinstance(other, Poly):
            return Poly(_padded_sum(self._c, other._c))
        return SmoothField.__add__(self, other)

    __radd__ = __add__

    def __neg__(self):
        return Poly(-self._c)

    def __sub__(self, other):
        if isinstance(other, Real):
            other = Poly([other])
        if isinstance(other, Poly):
            return Poly(_padded_sum(self._c, -other._c))
        return SmoothField.__sub__(self, other)

    def __rsub__(self, other):
        if isinstance(other, Real):
            return Poly([other]) - self
        return SmoothField.__rsub__(self, other)

    def __mul__(self, other):
        if isinstance(other, Real):
            return Poly(self._c * float(other))
        if isinstance(other, Poly):
            return Poly(np.convolve(self._c, other._c))
        return SmoothField.__mul__(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Poly":
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        return Poly(npoly.polypow(self._c, k))

    def __eq__(self, other):
        if isinstance(other, Real):
            other = Poly([other])
        if not isinstance(other, Poly):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def allclose(self, other: "Poly | float", atol: float = 1e-12) -> bool:
        """Coefficientwise comparison with absolute tolerance."""
        other = other if isinstance(other, Poly) else Poly([other])
        n = max(self._c.size, other._c.size)
        a = np.pad(self._c, (0, n - self._c.size))
        b = np.pad(other._c, (0, n - other._c.size))
        return bool(np.max(np.abs(a - b)) <= atol)

    def __repr__(self):
        return f"Poly({self._c.tolist()})"


def _padded_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size < b.size:
        a, b = b, a
    out = a.copy()
    out[: b.size] += b
    return out


def as_field(obj) -> SmoothField:
    """Coerce numbers to constant polynomials; pass fields through."""
    if isinstance(obj, SmoothField):
        return obj
    if isinstance(obj, Real):
        return Poly([float(obj)])
    raise TypeError(f"cannot interpret {type(obj).__name__} as a SmoothField")


def hermite_he(k: int) -> Poly:
    """Probabilists' Hermite polynomial He_k (He_0=1, He_1=x, He_2=x^2-1, ...)."""
    prev, cur = Poly([1.0]), Poly([0.0, 1.0])
    if k == 0:
        return prev
    for n in range(1, k):
        prev, cur = cur, Poly.x() * cur - n * prev
    return cur


def all_poly(*fields) -> bool:
    return all(isinstance(f, Poly) for f in fields)
