"""A diffusion whose marginal law follows the projected density exactly.

Given the projected curve ``theta_t`` for ``dX = f dt + sqrt(a) dW`` on a
family with log-density exponent ``ell``, the process

    dY = u*(t, Y) dt + sqrt(a(Y)) dW,
    u*(x) = a'(x)/2 + a(x) ell'(x)/2
            - theta'^T int_{-inf}^x (c(y) - eta) exp(ell(y) - ell(x)) dy

has density ``p(.; theta_t)`` at every time. The drift is tabulated on a
grid at the trajectory times and the process is simulated by Euler-Maruyama.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EscapedGrid, Overflow, ValidationError
from .expfam import ExpFamily
from .fields import Poly
from .ode import Trajectory
from .oracle import Grid1D
from .projection import projected_rhs
from .sde import SdeModel

BLOCK = 8192  # paths per random substream


class InsufficientPaths(UserWarning):
    pass


_CELL_ORDER = 8


def _cell_integrals(fam: ExpFamily, eta, ell, top: float, x: np.ndarray) -> np.ndarray:
    """``int_{x_i}^{x_{i+1}} (c - eta) exp(ell - top)`` per grid cell, shape (n, m-1)."""
    xi, wi = np.polynomial.legendre.leggauss(_CELL_ORDER)
    half = 0.5 * np.diff(x)
    nodes = (0.5 * (x[1:] + x[:-1]))[:, None] + half[:, None] * xi[None, :]
    w = np.exp(np.asarray(ell(nodes.ravel()), dtype=float) - top) * np.repeat(half, _CELL_ORDER) * np.tile(wi, x.size - 1)
    v = (fam.stat_values(nodes.ravel()) - eta[:, None]) * w
    return v.reshape(fam.n, x.size - 1, _CELL_ORDER).sum(axis=-1)


def modified_drift(base: SdeModel, fam: ExpFamily, theta, grid: Grid1D, t: float = 0.0) -> np.ndarray:
    """Drift ``u*`` on ``grid.x`` for the family member at ``theta``.

    The running integral is accumulated cell by cell with an 8-point
    Gauss-Legendre rule. It is split at the mode of the density: left of it
    the sum runs from ``grid.lo``, right of it the mirrored sum runs from
    ``grid.hi`` (the two agree because ``c - eta`` integrates to zero). Both
    are carried as ``exp(ell - max ell)`` to avoid overflow.
    """
    f, a = base.at(t)
    mom = fam.moments(theta)
    velocity = projected_rhs(fam, base, mom.theta, t)
    ell = fam.exponent(mom.theta)
    x = grid.x
    lv = np.asarray(ell(x), dtype=float)
    top = lv.max()
    if top - min(lv[0], lv[-1]) > 700.0:
        raise Overflow("log-density range on the drift grid exceeds 700; narrow the grid")
    if lv[0] - top > np.log(1e-14) + 1e-9 or lv[-1] - top > np.log(1e-14) + 1e-9:
        raise ValidationError("drift grid does not reach the tails of the density (needs <= 1e-14 of the peak)")

    cells = _cell_integrals(fam, mom.eta, ell, top, x)
    left = np.zeros((fam.n, x.size))
    right = np.zeros((fam.n, x.size))
    left[:, 1:] = np.cumsum(cells, axis=1)
    right[:, :-1] = -np.cumsum(cells[:, ::-1], axis=1)[:, ::-1]
    mode = int(np.argmax(lv))
    cum = np.where(np.arange(x.size) <= mode, left, right)
    integral = cum * np.exp(top - lv)
    da = a.deriv()
    return 0.5 * np.asarray(da(x)) + 0.5 * np.asarray(a(x)) * np.asarray(ell.d1(x)) - velocity @ integral


@dataclass
class SynthesizedDrift:
    """``u*`` tabulated at the trajectory times on ``grid``."""

    base: SdeModel
    fam: ExpFamily
    theta_path: Trajectory
    grid: Grid1D
    table: np.ndarray  # (n_times, m)

    @classmethod
    def build(cls, base: SdeModel, fam: ExpFamily, theta_path: Trajectory, grid: Grid1D) -> "SynthesizedDrift":
        rows = [modified_drift(base, fam, th, grid, t) for t, th in zip(theta_path.times, theta_path.states)]
        table = np.array(rows)
        if not np.all(np.isfinite(table[:, 1:-1])):
            raise Overflow("modified drift is not finite on the grid interior")
        return cls(base, fam, theta_path, grid, table)

    @property
    def times(self) -> np.ndarray:
        return self.theta_path.times

    def row(self, t: float) -> np.ndarray:
        """Drift on the grid at time ``t``, linear in time between table rows."""
        ts = self.times
        if ts.size == 1:
            return self.table[0]
        j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2))
        s = min(max((t - ts[j]) / (ts[j + 1] - ts[j]), 0.0), 1.0)
        return (1.0 - s) * self.table[j] + s * self.table[j + 1]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        """Bilinear interpolation in ``(t, x)``; clamped outside the table."""
        return np.interp(x, self.grid.x, self.row(t))


@dataclass
class PathEnsemble:
    seed: int
    n_paths: int
    dt: float
    terminal_values: np.ndarray
    escaped: int = 0
    #: values at intermediate recording times, keyed by time
    snapshots: dict = field(default_factory=dict)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FPE_PROJECT_THREADS", "1")))
    except ValueError:
        return 1


def simulate_em(
    drift: SynthesizedDrift | Callable[[float, np.ndarray], np.ndarray],
    x0_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_paths: int,
    dt: float,
    t1: float,
    seed: int,
    t0: float = 0.0,
    diffusion: SdeModel | None = None,
    bounds: tuple[float, float] | None = None,
    record: Sequence[float] = (),
) -> PathEnsemble:
    """Euler-Maruyama paths of ``dY = u(t, Y) dt + sqrt(a(Y)) dW``.

    Paths are simulated in blocks of :data:`BLOCK`; block ``b`` draws from
    ``SeedSequence(seed, spawn_key=(b,))``, so the ensemble depends only on
    ``seed`` and not on how blocks are scheduled over threads
    (``FPE_PROJECT_THREADS``). Times in ``record`` are rounded to the step
    grid and their values kept in ``snapshots``.

    Raises :class:`EscapedGrid` when more than 0.1% of the paths leave the
    drift table's grid.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    if dt <= 0 or not t1 > t0:
        raise ValidationError("need dt > 0 and t1 > t0")
    tabulated = isinstance(drift, SynthesizedDrift)
    if tabulated:
        diffusion = diffusion or drift.base
        bounds = bounds or (drift.grid.lo, drift.grid.hi)
    if diffusion is None:
        raise ValidationError("a diffusion model is required for a bare drift callable")
    n_steps = int(round((t1 - t0) / dt))
    h = (t1 - t0) / n_steps
    sqrt_h = np.sqrt(h)
    steps = t0 + h * np.arange(n_steps)
    keep = {int(round((r - t0) / h)): float(r) for r in record if t0 < r <= t1}

    if tabulated:
        xs = drift.grid.x
        rows = np.array([drift.row(t) for t in steps])
    const_sig = None
    if not diffusion.time_dependent:
        a0 = diffusion.a
        if isinstance(a0, Poly) and a0.degree <= 0:
            const_sig = float(np.sqrt(max(a0(0.0), 0.0)))

    def run_block(b: int):
        size = min(BLOCK, n_paths - b * BLOCK)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        y = np.array(x0_sampler(rng, size), dtype=float)
        out = np.zeros(size, dtype=bool)
        snaps = {}
        for k in range(n_steps):
            t = steps[k]
            u = np.interp(y, xs, rows[k]) if tabulated else drift(t, y)
            if const_sig is None:
                sig = np.sqrt(np.maximum(np.asarray(diffusion.at(t)[1](y), dtype=float), 0.0))
            else:
                sig = const_sig
            y += u * h + (sig * sqrt_h) * rng.standard_normal(size)
            if bounds is not None:
                out |= (y < bounds[0]) | (y > bounds[1])
            if k + 1 in keep:
                snaps[keep[k + 1]] = y.copy()
        return y, int(out.sum()), snaps

    blocks = range((n_paths + BLOCK - 1) // BLOCK)
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]
    values = np.concatenate([r[0] for r in results])
    escaped = sum(r[1] for r in results)
    if escaped > 1e-3 * n_paths:
        raise EscapedGrid(f"{escaped} of {n_paths} paths left the drift grid")
    snapshots = {t: np.concatenate([r[2][t] for r in results]) for t in keep.values()}
    return PathEnsemble(seed, n_paths, h, values, escaped, snapshots)


@dataclass
class MomentCheck:
    stat: str
    empirical: float
    target: float
    stderr: float
    z: float
    passed: bool


def validate_moments(ensemble: PathEnsemble, fam: ExpFamily, theta_T, em_bias=0.0) -> list[MomentCheck]:
    """Compare ensemble averages of ``c_i(Y_T)`` with ``E_{theta_T}[c_i]``.

    A statistic passes when ``|empirical - target| <= 3 stderr + em_bias``.
    """
    target = fam.mean_params(theta_T)
    values = fam.stat_values(ensemble.terminal_values)
    n = values.shape[1]
    bias = np.broadcast_to(np.asarray(em_bias, dtype=float), target.shape)
    if n < 2:
        warnings.warn("fewer than two paths: standard errors are undefined", InsufficientPaths)
        stderr = np.full(target.shape, np.inf)
    else:
        stderr = values.std(axis=1, ddof=1) / np.sqrt(n)
    emp = values.mean(axis=1)
    out = []
    for i in range(fam.n):
        diff = emp[i] - target[i]
        z = diff / stderr[i] if stderr[i] > 0 else (0.0 if diff == 0 else np.inf)
        out.append(MomentCheck(f"c{i + 1}", float(emp[i]), float(target[i]), float(stderr[i]), float(z),
                               bool(abs(diff) <= 3.0 * stderr[i] + bias[i])))
    return out


def em_bias_ou(dt: float, t: float, mean0: float, var0: float, k: float = 1.0, sigma2: float = 2.0) -> np.ndarray:
    """Weak Euler-Maruyama bias of ``(E Y, E Y^2)`` for an OU process.

    Exact moment recursions of the scheme against the closed-form flow; the
    result divided by ``dt`` is the bias constant used as slack in
    :func:`validate_moments`.
    """
    n = int(round(t / dt))
    r = 1.0 - k * dt
    m_em = mean0 * r**n
    v_em = var0 * r ** (2 * n) + sigma2 * dt * (1.0 - r ** (2 * n)) / (1.0 - r * r)
    m_ex = mean0 * np.exp(-k * t)
    v_ex = var0 * np.exp(-2 * k * t) + sigma2 / (2 * k) * (1.0 - np.exp(-2 * k * t))
    return np.abs(np.array([m_em - m_ex, (v_em + m_em**2) - (v_ex + m_ex**2)]))


def ensemble_csv_rows(checks: list[MomentCheck]):
    yield ["stat", "empirical", "target", "stderr", "z"]
    for c in checks:
        yield [c.stat, c.empirical, c.target, c.stderr, c.z]
