"""One-dimensional Ito diffusions ``dX = f(X) dt + sqrt(a(X)) dW``.

The backward operator is ``L phi = f phi' + a phi'' / 2`` and its adjoint
drives the Fokker-Planck equation ``dp/dt = -(f p)' + (a p)'' / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .fields import Poly, SmoothField, all_poly, as_field


@dataclass(frozen=True)
class SdeModel:
    """Drift ``f`` and squared diffusion ``a``.

    For a time-dependent model pass callables ``t -> SmoothField`` and set
    ``time_dependent=True``; :meth:`at` freezes the coefficients at a time.
    """

    f: SmoothField | Callable[[float], SmoothField]
    a: SmoothField | Callable[[float], SmoothField]
    time_dependent: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.time_dependent:
            object.__setattr__(self, "f", as_field(self.f))
            object.__setattr__(self, "a", as_field(self.a))

    def at(self, t: float = 0.0) -> tuple[SmoothField, SmoothField]:
        if self.time_dependent:
            return as_field(self.f(t)), as_field(self.a(t))
        return self.f, self.a

    @property
    def is_polynomial(self) -> bool:
        return not self.time_dependent and all_poly(self.f, self.a)

    def check_diffusion(self, lo: float, hi: float, t: float = 0.0, points: int = 2001) -> None:
        """Raise :class:`ValidationError` if ``a < 0`` somewhere on ``[lo, hi]``."""
        _, a = self.at(t)
        xs = np.linspace(lo, hi, points)
        amin = float(np.min(a(xs)))
        if amin < 0.0:
            raise ValidationError(f"squared diffusion is negative on [{lo}, {hi}] (min {amin:.3g})")

    # common models
    @classmethod
    def ornstein_uhlenbeck(cls, k: float = 1.0, sigma2: float = 2.0) -> "SdeModel":
        return cls(Poly([0.0, -k]), Poly([sigma2]), name=f"ou(k={k}, sigma2={sigma2})")

    @classmethod
    def heat(cls, a: float = 2.0) -> "SdeModel":
        return cls(Poly([0.0]), Poly([a]), name=f"heat(a={a})")

    @classmethod
    def double_well(cls, sigma2: float = 2.0) -> "SdeModel":
        return cls(Poly([0.0, 1.0, 0.0, -1.0]), Poly([sigma2]), name="double-well")

    @classmethod
    def divergence_form(cls, coeff: SmoothField) -> "SdeModel":
        """SDE whose forward operator is ``p -> (coeff p')'``: drift ``coeff'``, squared diffusion ``2 coeff``."""
        coeff = as_field(coeff)
        return cls(coeff.deriv(), 2.0 * coeff, name="divergence-form")


def backward_apply(model: SdeModel, phi: SmoothField, t: float = 0.0) -> SmoothField:
    """``L phi = f phi' + a phi'' / 2``; exact when everything is polynomial."""
    f, a = model.at(t)
    phi = as_field(phi)
    dphi = phi.deriv()
    return f * dphi + 0.5 * (a * dphi.deriv())


def alpha_field(model: SdeModel, fam, theta, t: float = 0.0) -> SmoothField:
    """Fokker-Planck velocity in the exponential chart, ``(L* p) / p`` at ``p(.; theta)``.

    With ``ell`` the full log-density exponent (statistics plus background),
    ``alpha = -(f ell' + f') + (a ell'' + a ell'^2 + 2 a' ell' + a'') / 2``.
    The result has zero mean under ``p(.; theta)``.
    """
    f, a = model.at(t)
    ell = fam.exponent(theta)
    d_ell = ell.deriv()
    dd_ell = d_ell.deriv()
    da = a.deriv()
    return -(f * d_ell + f.deriv()) + 0.5 * (a * dd_ell + a * d_ell * d_ell + 2.0 * (da * d_ell) + da.deriv())


def forward_apply_grid(model: SdeModel, x: np.ndarray, p: np.ndarray, t: float = 0.0) -> np.ndarray:
    """``L* p`` on a uniform grid by central differences (interior points; ends set to 0)."""
    f, a = model.at(t)
    h = x[1] - x[0]
    fp = f(x) * p
    ap = a(x) * p
    out = np.zeros_like(p)
    out[1:-1] = -(fp[2:] - fp[:-2]) / (2 * h) + 0.5 * (ap[2:] - 2 * ap[1:-1] + ap[:-2]) / h**2
    return out
