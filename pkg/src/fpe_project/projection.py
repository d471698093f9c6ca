"""Finite-dimensional reductions of the Fokker-Planck and heat equations.

The projected parameter dynamics on an exponential family ``EF(c)`` are

    theta' = g(theta)^{-1} E_theta[L c],

which is the Fisher-Rao orthogonal projection of the Fokker-Planck velocity
``alpha = L* p / p`` onto the tangent space spanned by ``c - E c``. The
same vector is reached through the expectation parameters by the
assumed-density closure ``eta' = E_{p(eta)}[L c]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import EmptyInput, FpeProjectError, ValidationError
from .expfam import Background, ExpFamily, Moments, check_fisher
from .fields import SmoothField, as_field
from .ode import IvpProblem, Trajectory, integrate
from .quadrature import QuadratureSpec
from .sde import SdeModel, alpha_field, backward_apply


@dataclass(frozen=True)
class ProjectedState:
    t: float
    theta: np.ndarray


@dataclass(frozen=True)
class ResidualReport:
    """``r2 = e_alpha2 - proj_norm2``; ``r2`` is the squared projection residual."""

    r2: float
    e_alpha2: float
    proj_norm2: float


@lru_cache(maxsize=128)
def _generator_fields(fam: ExpFamily, model: SdeModel, t: float) -> tuple:
    return tuple(backward_apply(model, c, t) for c in fam.stats)


def _generator_values(fam: ExpFamily, model: SdeModel, mom: Moments, t: float) -> np.ndarray:
    lc = _generator_fields(fam, model, 0.0 if not model.time_dependent else float(t))
    x = mom.x
    return np.stack([np.broadcast_to(f(x), x.shape) for f in lc])


def generator_expectation(fam: ExpFamily, model: SdeModel, theta, t: float = 0.0) -> np.ndarray:
    """``E_theta[L c]``."""
    mom = fam.moments(theta)
    return np.asarray(mom.expect(_generator_values(fam, model, mom, t)))


def projected_rhs(fam: ExpFamily, model: SdeModel, theta, t: float = 0.0) -> np.ndarray:
    """Right-hand side ``g^{-1}(theta) E_theta[L c]`` of the projected flow."""
    if isinstance(theta, ProjectedState):
        theta, t = theta.theta, theta.t
    mom = fam.moments(theta)
    check_fisher(mom.g)
    return mom.solve(mom.expect(_generator_values(fam, model, mom, t)))


def residual(fam: ExpFamily, model: SdeModel, theta, t: float = 0.0) -> ResidualReport:
    """Squared Fisher-Rao distance between ``alpha`` and its tangent projection."""
    if isinstance(theta, ProjectedState):
        theta, t = theta.theta, theta.t
    mom = fam.moments(theta)
    check_fisher(mom.g)
    e_lc = np.asarray(mom.expect(_generator_values(fam, model, mom, t)))
    alpha = alpha_field(model, fam, mom.theta, t)
    e_alpha2 = float(mom.expect(np.asarray(alpha(mom.x)) ** 2))
    proj = float(e_lc @ mom.solve(e_lc))
    return ResidualReport(e_alpha2 - proj, e_alpha2, proj)


def projected_flow(
    fam: ExpFamily,
    model: SdeModel,
    theta0,
    t_span: tuple[float, float],
    t_eval: Sequence[float] | None = None,
    h0: float = 1e-2,
    rtol: float = 1e-8,
    atol: float = 1e-9,
) -> Trajectory:
    """Integrate the projected flow, stopping at the first exit from the feasible set."""
    problem = IvpProblem(
        lambda t, th: projected_rhs(fam, model, th, t),
        np.asarray(theta0, dtype=float),
        t_span,
        guard=lambda t, th: fam.is_feasible(th),
    )
    return integrate(problem, h0=h0, rtol=rtol, atol=atol, t_eval=t_eval)


# Galerkin projection of the divergence-form heat equation dp/dt = (a p')'


@dataclass
class GalerkinBasis:
    """Basis ``W`` of the reference space (centred under the standard Gaussian)
    and the diffusion coefficient ``coeff`` of ``dp/dt = (coeff p')'``."""

    W: Sequence[SmoothField]
    coeff: SmoothField = 1.0
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        self.W = [as_field(w) for w in self.W]
        self.coeff = as_field(self.coeff)
        means = self.family.mean_params(np.zeros(len(self.W)))
        if np.max(np.abs(means)) > 1e-10:
            raise ValidationError(f"basis is not centred under the Gaussian background: {means}")

    @property
    def family(self) -> ExpFamily:
        return ExpFamily(self.W, Background.gaussian(), self.quad)


def galerkin_heat_rhs(basis: GalerkinBasis, theta) -> np.ndarray:
    """Galerkin parameter velocity ``g^{-1} b`` for the heat equation.

    ``b_k = E[coeff(X) X W_k'(X)] - E[coeff(X) U'(X) W_k'(X)]`` with
    ``U = theta . W``; this is the weak form tested against ``W_k`` and is
    affine in ``theta``.
    """
    fam = basis.family
    mom = fam.moments(theta)
    check_fisher(mom.g)
    x = mom.x
    a = np.broadcast_to(basis.coeff(x), x.shape)
    dW = np.stack([np.broadcast_to(w.d1(x), x.shape) for w in basis.W])
    dU = mom.theta @ dW
    b = np.asarray(mom.expect((a * (x - dU))[None, :] * dW))
    return mom.solve(b)


def galerkin_flow(basis: GalerkinBasis, theta0, t_span, t_eval=None, rtol: float = 1e-9, atol: float = 1e-11) -> Trajectory:
    fam = basis.family
    problem = IvpProblem(
        lambda t, th: galerkin_heat_rhs(basis, th),
        np.asarray(theta0, dtype=float),
        t_span,
        guard=lambda t, th: fam.is_feasible(th),
    )
    return integrate(problem, rtol=rtol, atol=atol, t_eval=t_eval)


# Assumed-density closure in expectation coordinates


def assumed_density_rhs(fam: ExpFamily, model: SdeModel, eta, t: float = 0.0, theta0=None, tol: float = 1e-11) -> np.ndarray:
    """``E_{p(eta)}[L c]`` where ``p(eta)`` is the family member with mean parameters ``eta``."""
    theta = fam.natural_from_mean(eta, theta0, tol=tol)
    return generator_expectation(fam, model, theta, t)


class AssumedDensityFlow:
    """ODE right-hand side for ``eta' = E_{p(eta)}[L c]`` with warm-started inversion.

    The last recovered ``theta`` seeds the next Newton solve; the object is
    therefore stateful and meant for one integration at a time.
    """

    def __init__(self, fam: ExpFamily, model: SdeModel, theta0, tol: float = 1e-11):
        self.fam, self.model, self.tol = fam, model, tol
        self.theta = np.asarray(theta0, dtype=float)

    def __call__(self, t: float, eta: np.ndarray) -> np.ndarray:
        theta = self.fam.natural_from_mean(eta, self.theta, tol=self.tol)
        self.theta = theta
        return generator_expectation(self.fam, self.model, theta, t)

    def feasible(self, t: float, eta: np.ndarray) -> bool:
        try:
            self.fam.natural_from_mean(eta, self.theta, tol=self.tol)
        except FpeProjectError:
            return False
        return True


def assumed_density_flow(fam, model, eta0, t_span, t_eval=None, theta0=None, rtol=1e-9, atol=1e-11) -> Trajectory:
    if theta0 is None:
        theta0 = fam.natural_from_mean(eta0)
    rhs = AssumedDensityFlow(fam, model, theta0)
    problem = IvpProblem(rhs, np.asarray(eta0, dtype=float), t_span)
    return integrate(problem, rtol=rtol, atol=atol, t_eval=t_eval)


# Invariance scan


@dataclass
class InvarianceReport:
    points: list  # (theta, ResidualReport) pairs
    failures: list  # (theta, error message) pairs
    max_r2: float
    tol: float

    @property
    def invariant(self) -> bool:
        return not self.failures and self.max_r2 <= self.tol


def invariance_scan(fam: ExpFamily, model: SdeModel, theta_grid, tol: float = 1e-8, t: float = 0.0) -> InvarianceReport:
    """Evaluate the projection residual over a parameter grid.

    The family is flagged numerically invariant under the flow when the
    largest squared residual is at most ``tol`` and no grid point failed.
    """
    grid = [np.asarray(th, dtype=float) for th in theta_grid]
    if not grid:
        raise EmptyInput("invariance_scan needs at least one parameter point")
    points, failures = [], []
    for th in grid:
        try:
            points.append((th, residual(fam, model, th, t)))
        except FpeProjectError as exc:
            failures.append((th, f"{type(exc).__name__}: {exc}"))
    max_r2 = max((r.r2 for _, r in points), default=float("nan"))
    return InvarianceReport(points, failures, max_r2, tol)
