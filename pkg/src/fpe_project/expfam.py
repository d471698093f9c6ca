"""Finite-dimensional exponential families ``p(x; theta) = exp(theta.c(x) - psi(theta)) M(x)``.

The background ``M`` is Lebesgue measure, the standard Gaussian density, or
the generalised density proportional to ``exp(-x**m / m)`` for even
``m >= 4``. All moments are computed by composite Gauss-Legendre quadrature
on a domain truncated from the log-density exponent, so any polynomial
statistics (and generic smooth ones) are handled by one code path.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleTheta, NoConvergence, NoDecay, QuadratureFailure, SingularFisher
from .fields import Poly, SmoothField, all_poly, as_field, hermite_he
from .quadrature import QuadratureRule, QuadratureSpec, build_rule, csum

COND_LIMIT = 1e12
_MEMO_SIZE = 16


@dataclass(frozen=True)
class Background:
    """Reference measure, stored as an unnormalised log-weight plus ``log Z``."""

    kind: str
    log_weight: Poly
    log_norm: float
    m: int | None = None

    @classmethod
    def lebesgue(cls) -> "Background":
        return cls("lebesgue", Poly([0.0]), 0.0)

    @classmethod
    def gaussian(cls) -> "Background":
        return cls("gaussian", Poly([0.0, 0.0, -0.5]), 0.5 * math.log(2.0 * math.pi))

    @classmethod
    def generalized(cls, m: int) -> "Background":
        if m < 4 or m % 2:
            raise ValueError(f"generalized background needs an even m >= 4, got {m}")
        # int exp(-x^m/m) dx = 2 m^(1/m - 1) Gamma(1/m)
        log_z = math.log(2.0) + (1.0 / m - 1.0) * math.log(m) + math.lgamma(1.0 / m)
        return cls("generalized", Poly.monomial(m, -1.0 / m), log_z, m)

    def log_density(self, x):
        return self.log_weight(x) - self.log_norm


@dataclass(frozen=True)
class Moments:
    """Everything the family knows at one natural parameter.

    ``weights`` are normalised density weights on ``rule.all_nodes`` (high-order
    block first), so ``expect`` integrates against ``p(.; theta)``.
    """

    theta: np.ndarray
    psi: float
    eta: np.ndarray
    g: np.ndarray
    rule: QuadratureRule
    weights: np.ndarray
    stats: np.ndarray  # c_i on rule.all_nodes, shape (n, N_all)
    rtol: float = field(default=1e-11)

    @property
    def x(self) -> np.ndarray:
        return self.rule.all_nodes

    def expect(self, values) -> np.ndarray | float:
        """``E_theta`` of a callable or of node-wise values (leading batch dims allowed)."""
        vals = values(self.x) if callable(values) else values
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("integrand is not finite on the quadrature nodes")
        n = self.rule.size
        wv = vals * self.weights
        hi = csum(wv[..., :n])
        lo = csum(wv[..., n:])
        scale = csum(np.abs(wv[..., :n]))
        err = np.abs(np.asarray(hi) - np.asarray(lo))
        if np.any(err > self.rtol * np.maximum(scale, 1e-300) + 1e-300):
            raise QuadratureFailure(f"expectation error estimate {np.max(err):.3e} too large")
        return hi

    def cov_with_stats(self, values) -> np.ndarray:
        """``Cov_theta(U, c_i)`` for all ``i``."""
        u = values(self.x) if callable(values) else np.asarray(values, dtype=float)
        u_mean = self.expect(u)
        centred = self.stats - self.eta[:, None]
        return np.asarray(self.expect((u - u_mean)[None, :] * centred))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``g^{-1} rhs``."""
        return np.linalg.solve(self.g, rhs)


class ExpFamily:
    """Exponential family ``EF(c)`` on the real line.

    Parameters
    ----------
    stats : sequence of SmoothField
        Sufficient statistics ``c_1 .. c_n``.
    background : Background
        Reference density; Lebesgue by default.
    quad : QuadratureSpec
        Quadrature settings used for every expectation.
    """

    def __init__(
        self,
        stats: Sequence[SmoothField],
        background: Background | None = None,
        quad: QuadratureSpec | None = None,
    ):
        if len(stats) < 1:
            raise ValueError("an exponential family needs at least one statistic")
        self.stats = [as_field(c) for c in stats]
        self.background = background or Background.lebesgue()
        self.quad = quad or QuadratureSpec()
        # memo of recent quadrature passes; results are pure functions of theta
        self._memo: OrderedDict[bytes, Moments] = OrderedDict()

    # convenience constructors
    @classmethod
    def monomial(cls, k: int, background: Background | None = None, **kw) -> "ExpFamily":
        """Statistics ``x, x^2, ..., x^k``."""
        return cls([Poly.monomial(i) for i in range(1, k + 1)], background, **kw)

    @classmethod
    def hermite(cls, k: int, background: Background | None = None, **kw) -> "ExpFamily":
        """Statistics ``He_1, ..., He_k`` (probabilists' Hermite polynomials)."""
        return cls([hermite_he(i) for i in range(1, k + 1)], background, **kw)

    @property
    def n(self) -> int:
        return len(self.stats)

    @property
    def is_polynomial(self) -> bool:
        return all_poly(*self.stats)

    def __repr__(self):
        return f"ExpFamily(n={self.n}, background={self.background.kind!r})"

    def _theta(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float).reshape(-1)
        if th.size != self.n:
            raise ValueError(f"expected {self.n} natural parameters, got {th.size}")
        return th

    def exponent(self, theta) -> SmoothField:
        """Total log-density exponent ``theta.c(x) + log_weight(x)`` (unnormalised)."""
        th = self._theta(theta)
        ell = self.background.log_weight
        for t, c in zip(th, self.stats):
            ell = ell + float(t) * c
        return ell

    def stat_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(c(x), x.shape) for c in self.stats])

    def is_feasible(self, theta) -> bool:
        """Numeric feasibility: the exponent decays and the moments converge."""
        try:
            self.moments(theta)
        except (InfeasibleTheta, QuadratureFailure):
            return False
        return True

    def _rule(self, th: np.ndarray, spec: QuadratureSpec | None = None) -> QuadratureRule:
        ell = self.exponent(th)
        if isinstance(ell, Poly) and (ell.degree < 2 or ell.degree % 2 or ell.leading >= 0):
            raise InfeasibleTheta(f"theta={th.tolist()}: exponent does not decay at +-inf")
        try:
            return build_rule(ell, spec or self.quad)
        except NoDecay as exc:
            raise InfeasibleTheta(f"theta={th.tolist()}: {exc}") from exc

    def moments(self, theta) -> Moments:
        """Quadrature pass returning ``psi``, ``eta`` and the Fisher matrix at ``theta``.

        Raises
        ------
        InfeasibleTheta
            If the integrand does not decay.
        QuadratureFailure
            If the error estimate stays above tolerance after refinement.
        """
        th = self._theta(theta)
        key = th.tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        mom = self._moments(th)
        self._memo[key] = mom
        if len(self._memo) > _MEMO_SIZE:
            self._memo.popitem(last=False)
        return mom

    def _moments(self, th: np.ndarray) -> Moments:
        rule = self._rule(th)
        ell = self.exponent(th)
        rtol = self.quad.rtol
        for _ in range(self.quad.max_refinements + 1):
            x = rule.all_nodes
            lv = np.asarray(ell(x), dtype=float)
            shift = lv[: rule.size].max()
            w = np.exp(lv - shift)
            n = rule.size
            wz = np.concatenate([w[:n] * rule.weights, w[n:] * rule.weights_lo])
            z_hi, z_lo = csum(wz[:n]), csum(wz[n:])
            cv = self.stat_values(x)
            if not (z_hi > 0.0 and z_lo > 0.0):
                rule = rule.refined()
                continue
            eta_hi = csum(cv[:, :n] * wz[:n]) / z_hi
            eta_lo = csum(cv[:, n:] * wz[n:]) / z_lo
            scale = csum(np.abs(cv[:, :n]) * wz[:n]) / z_hi
            ok = abs(z_hi - z_lo) <= rtol * z_hi and np.all(
                np.abs(eta_hi - eta_lo) <= rtol * np.maximum(scale, 1e-300)
            )
            if ok:
                break
            rule = rule.refined()
        else:
            raise QuadratureFailure(f"moments at theta={th.tolist()} did not converge")

        weights = np.concatenate([wz[:n] / z_hi, wz[n:] / z_lo])
        centred = cv[:, :n] - eta_hi[:, None]
        prod = centred[:, None, :] * centred[None, :, :] * weights[None, None, :n]
        g = csum(prod)
        g = 0.5 * (g + g.T)
        psi = shift + math.log(z_hi) - self.background.log_norm
        return Moments(th, psi, eta_hi, g, rule, weights, cv, rtol)

    def log_partition(self, theta) -> float:
        return self.moments(theta).psi

    def mean_params(self, theta) -> np.ndarray:
        return self.moments(theta).eta

    def fisher_matrix(self, theta) -> np.ndarray:
        """Covariance of the statistics under ``p(.; theta)`` (the Hessian of ``psi``).

        Raises :class:`SingularFisher` when the scaled condition number
        exceeds 1e12.
        """
        mom = self.moments(theta)
        check_fisher(mom.g)
        return mom.g

    def log_density(self, theta, x):
        mom = self.moments(theta)
        x = np.asarray(x, dtype=float)
        return mom.theta @ self.stat_values(x) - mom.psi + self.background.log_density(x)

    def density(self, theta, x):
        return np.exp(self.log_density(theta, x))

    def natural_from_mean(self, eta, theta0=None, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
        """Invert ``eta = grad psi(theta)`` by damped Newton iteration.

        The Newton step solves ``g(theta) delta = eta - grad psi(theta)`` and
        is halved until the convex objective ``psi(theta) - theta.eta`` shows
        Armijo decrease (once the objective is flat to rounding, a decrease of
        the residual norm is accepted instead). Steps cut short, usually by
        the boundary of the feasible set, add Levenberg-Marquardt damping
        ``g + mu diag(g)``, which turns the step toward the scaled gradient.
        """
        eta = np.asarray(eta, dtype=float).reshape(-1)
        th0 = self._theta(theta0 if theta0 is not None else default_theta(self))
        try:
            return self._newton(eta, th0, tol, max_iter)
        except (NoConvergence, InfeasibleTheta) as exc:
            if self._leading_constraint() is None:
                raise
            first = exc
        try:
            return self._newton(eta, self._barrier_path(eta, th0), tol, max_iter)
        except (NoConvergence, InfeasibleTheta):
            raise first from None

    def _leading_constraint(self):
        """``(a, b)`` such that feasibility needs ``a.theta + b < 0``.

        This is the top coefficient of the exponent when the statistics set
        it; ``None`` for non-polynomial families or when the background
        dominates.
        """
        if not (self.is_polynomial and isinstance(self.background.log_weight, Poly)):
            return None
        top = max(c.degree for c in self.stats)
        bg = self.background.log_weight
        if top % 2 or bg.degree > top:
            return None
        a = np.array([c.coef[top] if c.degree == top else 0.0 for c in self.stats])
        b = bg.coef[top] if bg.degree == top else 0.0
        return a, float(b)

    def _barrier_path(self, eta: np.ndarray, th: np.ndarray) -> np.ndarray:
        """Approximate ``theta(eta)`` by minimising
        ``psi - theta.eta - nu log(-(a.theta + b))`` for shrinking ``nu``.

        The barrier keeps iterates off the boundary where plain Newton can
        jam (the objective is not coercive there).
        """
        a, b = self._leading_constraint()

        def phi(th, mom, nu):
            return mom.psi - th @ eta - nu * math.log(-(a @ th + b))

        nu = 1.0
        while nu > 1e-9:
            for _ in range(50):
                mom = self.moments(th)
                slack = -(a @ th + b)
                grad = mom.eta - eta + nu * a / slack
                hess = mom.g + nu * np.outer(a, a) / slack**2
                step = -np.linalg.solve(hess, grad)
                dec = -float(grad @ step)
                if dec < 1e-12:
                    break
                here, t = phi(th, mom, nu), 1.0
                for _ in range(40):
                    trial = th + t * step
                    if -(a @ trial + b) > 0:
                        try:
                            tm = self.moments(trial)
                        except (InfeasibleTheta, QuadratureFailure):
                            tm = None
                        if tm is not None and phi(trial, tm, nu) <= here - 1e-4 * t * dec:
                            th = trial
                            break
                    t *= 0.5
                else:
                    raise NoConvergence("barrier line search stalled")
            nu *= 0.1
        return th

    def _newton(self, eta: np.ndarray, th: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
        mom = self.moments(th)
        resid = eta - mom.eta
        mu, any_feasible = 0.0, True
        for _ in range(max_iter):
            if np.max(np.abs(resid)) <= tol:
                return th
            check_fisher(mom.g)
            norm = np.linalg.norm(resid)
            obj = mom.psi - th @ eta
            d = np.diag(mom.g)
            accepted = False
            while not accepted:
                step = np.linalg.solve(mom.g + mu * np.diag(d), resid)
                slope = -float(resid @ step)  # directional derivative of the objective, < 0
                t, any_feasible = 1.0, False
                for _ in range(12):
                    trial = th + t * step
                    try:
                        trial_mom = self.moments(trial)
                    except InfeasibleTheta:
                        t *= 0.5
                        continue
                    except QuadratureFailure:
                        # numerically degenerate (e.g. collapsing variance): a rejected step
                        any_feasible = True
                        t *= 0.5
                        continue
                    any_feasible = True
                    trial_resid = eta - trial_mom.eta
                    trial_obj = trial_mom.psi - trial @ eta
                    armijo = trial_obj <= obj + 1e-4 * t * slope
                    flat = abs(trial_obj - obj) <= 1e-13 * (1.0 + abs(obj))
                    if armijo or (flat and np.linalg.norm(trial_resid) < norm):
                        accepted = True
                        break
                    t *= 0.5
                if accepted:
                    th, mom, resid = trial, trial_mom, trial_resid
                    # full steps relax the damping, cut steps tighten it
                    mu = 0.0 if (t == 1.0 and mu < 1e-6) else (mu * 0.1 if t == 1.0 else max(10.0 * mu, 1e-3))
                elif mu >= 1e8:
                    if not any_feasible:
                        raise InfeasibleTheta("Newton line search left the feasible set")
                    if np.max(np.abs(resid)) <= 10 * tol:
                        return th
                    raise NoConvergence(f"line search stalled with residual {np.max(np.abs(resid)):.3e}")
                else:
                    mu = max(10.0 * mu, 1e-3)
        if np.max(np.abs(resid)) <= tol:
            return th
        raise NoConvergence(f"no convergence after {max_iter} Newton iterations")

    def project_onto_tangent(self, theta, field) -> np.ndarray:
        """Coefficients ``w = g^{-1} Cov(U, c)``; the projection is ``w.(c - eta)``."""
        mom = self.moments(theta)
        check_fisher(mom.g)
        return mom.solve(mom.cov_with_stats(field))


def check_fisher(g: np.ndarray) -> None:
    d = np.sqrt(np.clip(np.diag(g), 0.0, None))
    if np.any(d == 0.0):
        raise SingularFisher("a statistic has zero variance")
    scaled = g / np.outer(d, d)
    cond = np.linalg.cond(scaled)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularFisher(f"Fisher matrix condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")


def default_theta(fam: ExpFamily) -> np.ndarray:
    """A feasible starting point: the background itself when it normalises,
    otherwise a negative coefficient on the highest even-degree statistic."""
    th = np.zeros(fam.n)
    if fam.background.kind != "lebesgue":
        return th
    if fam.is_polynomial:
        degs = [c.degree for c in fam.stats]
        top = max(degs)
        if top % 2 == 0:
            th[degs.index(top)] = -0.5
            return th
    raise InfeasibleTheta("no default starting point; pass theta0 explicitly")


def gaussian_theta(mean: float, var: float) -> np.ndarray:
    """Natural parameters of ``N(mean, var)`` for statistics ``(x, x^2)`` under Lebesgue measure."""
    return np.array([mean / var, -0.5 / var])


def gaussian_from_theta(theta) -> tuple[float, float]:
    th1, th2 = theta
    var = -0.5 / th2
    return th1 * var, var
