"""Composite Gauss-Legendre quadrature on an automatically truncated domain.

Every expectation in the package is an integral of the form
``int g(x) exp(ell(x)) dx`` with a log-weight ``ell`` that tends to -inf.
:func:`build_rule` chooses the truncation interval from ``ell`` and lays
equal-width Gauss-Legendre panels over it. Each rule carries a companion
rule of half the order on the same panels; the difference of the two
results is the error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import NoDecay, QuadratureFailure

_MAX_RADIUS = 1e3
_SAMPLES = 1025


@dataclass(frozen=True)
class QuadratureSpec:
    panel_order: int = 32
    panels: int = 16
    tail_eps: float = 1e-14
    max_refinements: int = 6
    #: acceptance threshold for the error estimate, relative to int |f|
    rtol: float = 1e-11

    def __post_init__(self):
        if self.panel_order < 2:
            raise ValueError("panel_order must be >= 2")
        if not (0.0 < self.tail_eps <= 1e-6):
            raise ValueError("tail_eps must lie in (0, 1e-6]")
        if self.panels < 1 or self.max_refinements < 0:
            raise ValueError("panels must be >= 1 and max_refinements >= 0")


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Composite rule on ``domain``; ``nodes_lo``/``weights_lo`` are the
    half-order companion used for error estimation."""

    nodes: np.ndarray
    weights: np.ndarray
    nodes_lo: np.ndarray
    weights_lo: np.ndarray
    domain: tuple[float, float]
    spec: QuadratureSpec

    @property
    def all_nodes(self) -> np.ndarray:
        """High-order nodes followed by low-order nodes.

        Node-wise values passed to :func:`integrate` are laid out this way.
        """
        return np.concatenate([self.nodes, self.nodes_lo])

    @property
    def size(self) -> int:
        return self.nodes.size

    def refined(self) -> "QuadratureRule":
        spec = replace(self.spec, panels=2 * self.spec.panels)
        return composite_rule(*self.domain, spec)


@lru_cache(maxsize=64)
def _gauss_legendre(k: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(k)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panels(lo: float, hi: float, panels: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gauss_legendre(k)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def composite_rule(lo: float, hi: float, spec: QuadratureSpec = QuadratureSpec()) -> QuadratureRule:
    """Composite Gauss-Legendre rule on a fixed interval ``[lo, hi]``."""
    if not hi > lo:
        raise ValueError("composite_rule needs hi > lo")
    nodes, weights = _panels(lo, hi, spec.panels, spec.panel_order)
    nodes_lo, weights_lo = _panels(lo, hi, spec.panels, max(1, spec.panel_order // 2))
    return QuadratureRule(nodes, weights, nodes_lo, weights_lo, (float(lo), float(hi)), spec)


def _eval_exponent(exponent, xs):
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.asarray(exponent(xs), dtype=float)
    return np.where(np.isnan(v), np.inf, v)


def truncation_bounds(exponent: Callable, tail_eps: float = 1e-14) -> tuple[float, float, float]:
    """Return ``(lo, hi, max_exponent)`` with ``exponent(lo), exponent(hi)``
    at or below ``max_exponent + log(tail_eps)``.

    The search doubles a symmetric radius from 1 up to 1e3 and then refines
    the bracket on a second, denser sample. Raises :class:`NoDecay` when the
    exponent does not fall off within that range.
    """
    drop = math.log(tail_eps)
    radius = 1.0
    while True:
        r = min(radius, _MAX_RADIUS)
        xs = np.linspace(-r, r, _SAMPLES)
        ell = _eval_exponent(exponent, xs)
        top = ell.max()
        if not np.isfinite(top):
            raise NoDecay("exponent is not finite on the sampling grid")
        thresh = top + drop
        if ell[0] <= thresh and ell[-1] <= thresh:
            # must keep decaying beyond the bracket
            outer = _eval_exponent(exponent, np.array([-1.5 * r, -2.0 * r, 1.5 * r, 2.0 * r]))
            if np.all(outer <= thresh) and outer[1] <= outer[0] and outer[3] <= outer[2]:
                break
        if r >= _MAX_RADIUS:
            raise NoDecay("exponent does not decay within |x| <= 1e3")
        radius *= 2.0

    # a second bump far away (e.g. a tiny negative leading coefficient) would
    # be missed by the bracket above
    far = np.geomspace(2.0 * r, 1e150, 600)
    if np.any(_eval_exponent(exponent, np.concatenate([-far, far])) > thresh):
        raise NoDecay("exponent rises again beyond the truncation bracket")

    above = np.flatnonzero(ell > thresh)
    lo = xs[max(above[0] - 1, 0)]
    hi = xs[min(above[-1] + 1, xs.size - 1)]
    # second pass resolves narrow peaks
    xs = np.linspace(lo, hi, _SAMPLES)
    ell = _eval_exponent(exponent, xs)
    top = max(top, ell.max())
    above = np.flatnonzero(ell > top + drop)
    if above.size:
        lo = xs[max(above[0] - 1, 0)]
        hi = xs[min(above[-1] + 1, xs.size - 1)]
    return float(lo), float(hi), float(top)


def build_rule(exponent: Callable, spec: QuadratureSpec = QuadratureSpec()) -> QuadratureRule:
    """Rule for integrals weighted by ``exp(exponent)``."""
    lo, hi, _ = truncation_bounds(exponent, spec.tail_eps)
    return composite_rule(lo, hi, spec)


def csum(a: np.ndarray) -> np.ndarray | float:
    """Sum along the last axis.

    numpy's pairwise summation: error grows like log(n) eps and the result
    depends only on the array contents and layout, so repeated calls are
    bit-identical.
    """
    a = np.ascontiguousarray(a, dtype=float)
    out = a.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def integrate_nodewise(values: np.ndarray, rule: QuadratureRule):
    """Integrate values given on ``rule.all_nodes``.

    ``values`` may carry leading batch dimensions. Returns ``(value, err)``
    with matching shapes; ``err`` is ``|high - low|``.
    """
    values = np.asarray(values, dtype=float)
    n = rule.size
    hi = csum(values[..., :n] * rule.weights)
    lo = csum(values[..., n:] * rule.weights_lo)
    return hi, np.abs(np.asarray(hi) - np.asarray(lo))


def integrate(f, rule: QuadratureRule, tol: float | None = None):
    """Integrate ``f`` over ``rule.domain``.

    Parameters
    ----------
    f : callable or ndarray
        A vectorised callable (e.g. a :class:`~fpe_project.fields.SmoothField`)
        or values on ``rule.all_nodes``. Only callables can be refined.
    tol : float, optional
        Absolute tolerance on the error estimate. Defaults to
        ``rule.spec.rtol * int |f|``.

    Returns
    -------
    (value, err_est)
    """
    if not callable(f):
        value, err = integrate_nodewise(f, rule)
        scale = csum(np.abs(np.asarray(f)[..., : rule.size]) * rule.weights)
        limit = tol if tol is not None else rule.spec.rtol * max(scale, 1e-300)
        if err > limit:
            raise QuadratureFailure(f"error estimate {err:.3e} exceeds {limit:.3e}")
        return float(value), float(err)

    for _ in range(rule.spec.max_refinements + 1):
        vals = np.asarray(f(rule.all_nodes), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("integrand is not finite on the quadrature nodes")
        value, err = integrate_nodewise(vals, rule)
        scale = csum(np.abs(vals[: rule.size]) * rule.weights)
        limit = tol if tol is not None else rule.spec.rtol * max(scale, 1e-300)
        if err <= limit:
            return float(value), float(err)
        rule = rule.refined()
    raise QuadratureFailure(f"error estimate {err:.3e} exceeds {limit:.3e} after refinement")
