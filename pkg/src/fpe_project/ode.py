"""Classical RK4 with step-doubling error control and domain-exit detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericFailure, StepUnderflow, ValidationError

Rhs = Callable[[float, np.ndarray], np.ndarray]
Guard = Callable[[float, np.ndarray], bool]


@dataclass
class IvpProblem:
    rhs: Rhs
    y0: np.ndarray
    t_span: tuple[float, float]
    guard: Guard | None = None

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValidationError("t_span must satisfy t1 > t0")
        if self.guard is not None and not self.guard(t0, self.y0):
            raise ValidationError("initial state violates the guard")


@dataclass(frozen=True)
class DomainExit:
    t: float
    reason: str


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    exit: DomainExit | None = None
    n_rhs: int = field(default=0, repr=False)

    def __len__(self):
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def step_rk4(rhs: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h``."""
    k1 = np.asarray(rhs(t, y), dtype=float)
    k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(rhs(t + h, y + h * k3), dtype=float)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(rhs: Rhs, y0, t_span: tuple[float, float], n_steps: int) -> Trajectory:
    """Fixed-step RK4, mostly for order checks."""
    t0, t1 = t_span
    h = (t1 - t0) / n_steps
    ys = [np.asarray(y0, dtype=float)]
    for i in range(n_steps):
        ys.append(step_rk4(rhs, t0 + i * h, ys[-1], h))
    return Trajectory(t0 + h * np.arange(n_steps + 1), np.array(ys))


def integrate(
    problem: IvpProblem,
    h0: float = 1e-2,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    t_eval: Sequence[float] | None = None,
    max_steps: int = 100_000,
) -> Trajectory:
    """Adaptive RK4 by step doubling.

    Each step compares one step of size ``h`` with two of size ``h/2``; the
    step is accepted when the Richardson error estimate is below
    ``atol + rtol*|y|`` componentwise, and the next ``h`` follows a PI
    controller. The accepted value is the Richardson-extrapolated one.

    A failing guard, or a right-hand side raising a numeric failure, first
    shrinks the step. Once the step is below ``1e-6`` of the span the exit
    time is located by bisection to ``1e-10`` of the span and the trajectory
    stops with a :class:`DomainExit`.

    If ``t_eval`` is given, states are recorded only at those times (plus
    ``t0``); otherwise at every accepted step.
    """
    rhs, guard = problem.rhs, problem.guard
    t0, t1 = map(float, problem.t_span)
    span = t1 - t0
    if h0 <= 0:
        raise ValidationError("h0 must be positive")
    n_rhs = 0

    def counted(t, y):
        nonlocal n_rhs
        n_rhs += 1
        return rhs(t, y)

    def attempt(t, y, h):
        """Return (full, two_half) or None when the step leaves the domain."""
        try:
            full = step_rk4(counted, t, y, h)
            half = step_rk4(counted, t, y, 0.5 * h)
            two = step_rk4(counted, t + 0.5 * h, half, 0.5 * h)
        except NumericFailure:
            return None
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(two))):
            return None
        if guard is not None and not (guard(t + 0.5 * h, half) and guard(t + h, two)):
            return None
        return full, two

    def ok(t, y, h):
        res = attempt(t, y, h)
        if res is None:
            return None
        full, two = res
        y_new = two + (two - full) / 15.0
        if guard is not None and not guard(t + h, y_new):
            return None
        return y_new

    targets = None
    if t_eval is not None:
        targets = sorted(float(s) for s in t_eval if t0 < s <= t1)
        if not targets or targets[-1] < t1:
            targets.append(t1)
    times, states = [t0], [problem.y0.copy()]
    t, y, hc = t0, problem.y0.copy(), min(h0, span)
    h_exit = 1e-6 * span
    err_prev = 1.0
    ti = 0
    exit_event = None

    for _ in range(max_steps):
        if t >= t1 - 1e-14 * span:
            break
        stop = targets[ti] if targets is not None else t1
        h = hc
        clamped = t + h >= stop - 1e-12 * span
        if clamped:
            h = stop - t
        res = attempt(t, y, h)
        if res is None:
            if h > h_exit:
                hc = 0.25 * h
                continue
            lo, hi = 0.0, h
            while hi - lo > 1e-10 * span:
                mid = 0.5 * (lo + hi)
                if ok(t, y, mid) is not None:
                    lo = mid
                else:
                    hi = mid
            if lo > 0.0:
                y = ok(t, y, lo)
                t = t + lo
                times.append(t)
                states.append(y.copy())
            exit_event = DomainExit(t, "guard failed or right-hand side left the domain")
            break
        full, two = res
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(two))
        err = float(np.max(np.abs(two - full) / 15.0 / scale)) if y.size else 0.0
        if err <= 1.0:
            y_new = two + (two - full) / 15.0
            if guard is not None and not guard(t + h, y_new):
                y_new = two
            t = stop if clamped else t + h
            y = y_new
            if targets is None or clamped:
                times.append(t)
                states.append(y.copy())
                if targets is not None:
                    ti += 1
            err = max(err, 1e-10)
            fac = 0.9 * err ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
            err_prev = err
            h_next = h * min(5.0, max(0.2, fac))
            hc = max(hc, h_next) if clamped else h_next
        else:
            hc = h * max(0.1, 0.9 * err ** (-1.0 / 5.0))
        if hc < 1e-14 * span:
            raise StepUnderflow(f"step size {hc:.3e} underflowed at t={t:.6g}")
    else:
        raise StepUnderflow(f"exceeded {max_steps} steps")

    return Trajectory(np.array(times), np.array(states), exit_event, n_rhs)
