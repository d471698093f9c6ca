"""Brute-force reference solutions on a uniform grid.

* :func:`fpe_solve` -- Crank-Nicolson for ``dp/dt = -(f p)' + (a p)''/2``
  with zero Dirichlet boundaries on a wide truncated interval.
* :func:`kl_divergence` and :func:`moment_project` -- the Kullback-Leibler
  point projection onto an exponential family (moment matching).
* :func:`mle_error_series` -- gap between the moments of the true solution
  and the assumed-density / projected flow when the statistics are
  eigenfunctions of the generator.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import InfeasibleTheta, Instability, MassLoss, NotEigen, SupportMismatch, ValidationError
from .expfam import ExpFamily
from .fields import Poly
from .projection import assumed_density_flow
from .sde import SdeModel, backward_apply

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    m: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValidationError("grid needs hi > lo")
        if self.m < 3:
            raise ValidationError("grid needs at least 3 points")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)


def trapezoid(values: np.ndarray, h: float) -> np.ndarray | float:
    """Trapezoid rule along the last axis of uniformly spaced samples."""
    v = np.asarray(values, dtype=float)
    return h * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


@dataclass
class GridDensity:
    grid: Grid1D
    p: np.ndarray
    clipped_mass: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (self.grid.m,):
            raise ValidationError(f"density has shape {self.p.shape}, grid has {self.grid.m} points")

    @classmethod
    def from_pdf(cls, grid: Grid1D, pdf: Callable[[np.ndarray], np.ndarray], normalize: bool = True) -> "GridDensity":
        d = cls(grid, np.asarray(pdf(grid.x), dtype=float))
        return d.normalized() if normalize else d

    @classmethod
    def gaussian(cls, grid: Grid1D, mean: float = 0.0, var: float = 1.0) -> "GridDensity":
        return cls.from_pdf(grid, lambda x: gaussian_pdf(x, mean, var))

    @classmethod
    def mixture(cls, grid: Grid1D, weights, means, variances) -> "GridDensity":
        def pdf(x):
            return sum(w * gaussian_pdf(x, m, v) for w, m, v in zip(weights, means, variances))

        return cls.from_pdf(grid, pdf)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def mass(self) -> float:
        return float(trapezoid(self.p, self.grid.h))

    def normalized(self) -> "GridDensity":
        return GridDensity(self.grid, self.p / self.mass(), self.clipped_mass)

    def expect(self, fn) -> np.ndarray | float:
        """Trapezoid expectation of a callable (or a list of callables)."""
        if isinstance(fn, (list, tuple)):
            return np.array([self.expect(f) for f in fn])
        return float(trapezoid(np.asarray(fn(self.x)) * self.p, self.grid.h))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "p"])
            for xi, pi in zip(self.x, self.p):
                w.writerow([repr(float(xi)), repr(float(pi))])

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        x, p = data[:, 0], data[:, 1]
        grid = Grid1D(float(x[0]), float(x[-1]), x.size)
        if not np.allclose(x, grid.x, rtol=0, atol=1e-9 * (grid.hi - grid.lo)):
            raise ValidationError("CSV grid is not uniform")
        return cls(grid, p)


def gaussian_pdf(x, mean: float = 0.0, var: float = 1.0):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


class FpeSolution(list):
    """List of ``(t, GridDensity)`` pairs with solver diagnostics attached.

    Attributes
    ----------
    mass_drift_rate : float
        Largest ``|mass - 1| / elapsed`` seen between renormalisations.
    min_value : float
        Most negative nodal value before clipping.
    clipped_mass : float
        Total mass removed by clipping negative values.
    renormalizations : int
    """

    mass_drift_rate: float = 0.0
    min_value: float = 0.0
    clipped_mass: float = 0.0
    renormalizations: int = 0


def _operator_bands(model: SdeModel, x: np.ndarray, h: float, t: float):
    """Tridiagonal bands of the discrete forward operator on the interior nodes."""
    f, a = model.at(t)
    fx = np.broadcast_to(f(x), x.shape)
    ax = np.broadcast_to(a(x), x.shape)
    lower = fx[:-2] / (2 * h) + ax[:-2] / (2 * h * h)  # coefficient of p_{i-1}
    diag = -ax[1:-1] / (h * h)
    upper = -fx[2:] / (2 * h) + ax[2:] / (2 * h * h)  # coefficient of p_{i+1}
    return lower[1:], diag, upper[:-1]


def fpe_solve(
    model: SdeModel,
    p0: GridDensity,
    t_span: tuple[float, float],
    dt: float,
    t_out: Sequence[float] | None = None,
    renormalize: bool = True,
) -> FpeSolution:
    """Crank-Nicolson solution of the Fokker-Planck equation on ``p0.grid``.

    The forward operator uses central differences of ``f p`` and ``a p``
    (the conservative flux form). Output is produced at ``t_out`` (default:
    the two ends of ``t_span``), each output time rounded to the nearest
    multiple of ``dt``.

    Raises
    ------
    ValidationError
        If ``p0`` is not negligible at the grid ends or ``dt <= 0``.
    MassLoss
        If the mass drifts by more than 1e-4 per unit time.
    Instability
        If a nodal value drops below -1e-8.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValidationError("t_span must satisfy t1 > t0")
    if max(p0.p[0], p0.p[-1]) > 1e-12:
        raise ValidationError("initial density is not negligible at the grid boundary; widen the grid")
    grid = p0.grid
    x, h = grid.x, grid.h
    model.check_diffusion(grid.lo, grid.hi)

    outs = sorted(set(float(s) for s in (t_out if t_out is not None else (t0, t1))))
    out_steps = {int(round((s - t0) / dt)): s for s in outs if t0 <= s <= t1 + 0.5 * dt}
    n_steps = max(out_steps) if out_steps else int(round((t1 - t0) / dt))

    sol = FpeSolution()
    p = p0.p.copy()
    p[0] = p[-1] = 0.0
    if 0 in out_steps:
        sol.append((t0, GridDensity(grid, p.copy())))

    factor = None
    last_norm_t = t0

    def factorize(t_mid):
        lo, di, up = _operator_bands(model, x, h, t_mid)
        k = 0.5 * dt
        dl, d, du, du2, ipiv, info = lapack.dgttrf(-k * lo, 1.0 - k * di, -k * up)
        if info != 0:
            raise Instability(f"Crank-Nicolson matrix is singular (info={info})")
        return (lo, di, up), (dl, d, du, du2, ipiv)

    for step in range(1, n_steps + 1):
        t_mid = t0 + (step - 0.5) * dt
        if factor is None or model.time_dependent:
            factor = factorize(t_mid)
        (lo, di, up), lu = factor
        q = p[1:-1]
        rhs = q + 0.5 * dt * (di * q)
        rhs[1:] += 0.5 * dt * lo * q[:-1]
        rhs[:-1] += 0.5 * dt * up * q[1:]
        sol_int, info = lapack.dgttrs(*lu, rhs)
        if info != 0:
            raise Instability(f"tridiagonal solve failed (info={info})")
        p[1:-1] = sol_int

        t = t0 + step * dt
        if step in out_steps:
            pmin = float(p.min())
            sol.min_value = min(sol.min_value, pmin)
            if pmin < -1e-8:
                raise Instability(f"negative density {pmin:.3e} at t={t:.6g}")
            neg = p < 0.0
            if np.any(neg):
                clipped = float(-trapezoid(np.where(neg, p, 0.0), h))
                sol.clipped_mass += clipped
                p[neg] = 0.0
            mass = float(trapezoid(p, h))
            elapsed = max(t - last_norm_t, dt)
            rate = abs(mass - 1.0) / elapsed
            sol.mass_drift_rate = max(sol.mass_drift_rate, rate)
            if rate > 1e-4:
                raise MassLoss(f"mass drift {rate:.3e} per unit time at t={t:.6g}; grid too small")
            if renormalize and mass != 1.0:
                p /= mass
                sol.renormalizations += 1
                log.debug("renormalised grid density at t=%.6g (mass %.15g)", t, mass)
                last_norm_t = t
            sol.append((out_steps[step], GridDensity(grid, p.copy(), sol.clipped_mass)))
    return sol


def kl_divergence(p: GridDensity, q) -> float:
    """Trapezoid ``KL(p || q)``; ``q`` is a GridDensity or a ``(family, theta)`` pair."""
    if isinstance(q, GridDensity):
        if q.grid != p.grid:
            raise ValidationError("densities live on different grids")
        qv = q.p
    else:
        fam, theta = q
        qv = fam.density(theta, p.x)
    pv = p.p
    support = pv > 1e-12
    if np.any(qv[support] <= 1e-300):
        raise SupportMismatch("q vanishes where p has mass")
    integrand = np.zeros_like(pv)
    pos = pv > 0.0
    integrand[pos] = pv[pos] * (np.log(pv[pos]) - np.log(np.maximum(qv[pos], 1e-300)))
    return float(trapezoid(integrand, p.grid.h))


def family_on_grid(fam: ExpFamily, theta, grid: Grid1D) -> GridDensity:
    return GridDensity(grid, fam.density(theta, grid.x))


def moment_project(fam: ExpFamily, p: GridDensity, theta0=None, tol: float = 1e-11):
    """KL projection of ``p`` onto ``fam``: match ``E_p[c]``; returns ``(theta, eta)``."""
    eta = p.expect(list(fam.stats))
    theta = fam.natural_from_mean(eta, theta0, tol=tol)
    return theta, eta


def eigen_spectrum(fam: ExpFamily, model: SdeModel, atol: float = 1e-12) -> np.ndarray:
    """Eigenvalues ``lambda_i`` with ``L c_i = -lambda_i c_i`` (exact polynomial check).

    Raises :class:`NotEigen` if some statistic is not an eigenfunction with a
    positive eigenvalue.
    """
    if not (fam.is_polynomial and model.is_polynomial):
        raise NotEigen("eigenfunction check needs polynomial statistics and coefficients")
    lam = []
    for i, c in enumerate(fam.stats):
        lc = backward_apply(model, c)
        value = -lc.leading / c.leading if lc.degree == c.degree else 0.0
        if not (lc + value * c).allclose(Poly([0.0]), atol=atol) or value <= 0.0:
            raise NotEigen(f"statistic {i + 1} is not an eigenfunction of the generator")
        lam.append(value)
    return np.array(lam)


@dataclass
class MleErrorSeries:
    times: np.ndarray
    eta_true: np.ndarray
    eta_proj: np.ndarray
    lam: np.ndarray
    eps0: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def eps(self) -> np.ndarray:
        return self.eta_true - self.eta_proj

    @property
    def eps_norm(self) -> np.ndarray:
        return np.max(np.abs(self.eps), axis=1)

    @property
    def predicted(self) -> np.ndarray:
        """``exp(-Lambda t) eps(0)`` for every output time."""
        return np.exp(-np.outer(self.times - self.times[0], self.lam)) * self.eps[0]

    @property
    def max_deviation(self) -> float:
        """``max_t |eps(t) - exp(-Lambda t) eps(0)|_inf``."""
        return float(np.max(np.abs(self.eps - self.predicted)))

    def rows(self):
        for t, et, ep, e in zip(self.times, self.eta_true, self.eta_proj, self.eps_norm):
            yield t, et, ep, e


def mle_error_series(
    fam: ExpFamily,
    model: SdeModel,
    p0: GridDensity,
    t_grid: Sequence[float],
    dt: float,
    offset=None,
    theta0=None,
) -> MleErrorSeries:
    """True moments from the grid solver against the assumed-density flow.

    ``eta_true(t)`` are trapezoid moments of :func:`fpe_solve`; ``eta_proj``
    integrates ``eta' = E_{p(eta)}[L c]`` from ``eta_true(0) - offset``.
    With eigenfunction statistics the gap obeys ``eps(t) = exp(-Lambda t) eps(0)``.
    """
    lam = eigen_spectrum(fam, model)
    t_grid = np.asarray(sorted(t_grid), dtype=float)
    sol = fpe_solve(model, p0, (t_grid[0], t_grid[-1]), dt, t_out=t_grid)
    eta_true = np.array([d.expect(list(fam.stats)) for _, d in sol])
    theta_start, eta0 = moment_project(fam, p0, theta0)
    delta = np.zeros(fam.n) if offset is None else np.asarray(offset, dtype=float)
    start = eta0 - delta
    if offset is not None:
        theta_start = fam.natural_from_mean(start, theta_start)
    traj = assumed_density_flow(fam, model, start, (t_grid[0], t_grid[-1]), t_eval=t_grid, theta0=theta_start)
    if traj.exit is not None:
        raise InfeasibleTheta(f"assumed-density flow left the family at t={traj.exit.t:.6g}")
    return MleErrorSeries(t_grid, eta_true, traj.states, lam, delta)
