import math

import numpy as np
import pytest

from fpe_project import ExpFamily, IvpProblem, SdeModel, integrate, projected_flow
from fpe_project.errors import ValidationError
from fpe_project.ode import integrate_fixed, step_rk4


def test_rk4_single_step():
    # exact RK4 amplification for y' = y: 1 + h + h^2/2 + h^3/6 + h^4/24
    y = step_rk4(lambda t, y: y, 0.0, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(1.1051708333333334, abs=1e-15)


def test_adaptive_decay():
    traj = integrate(IvpProblem(lambda t, y: -y, [1.0], (0.0, 1.0)))
    assert traj.times[-1] == 1.0
    assert abs(traj.final[0] - math.exp(-1.0)) < 1e-9
    assert traj.exit is None and traj.n_rhs > 0


def test_fourth_order():
    def err(n):
        tr = integrate_fixed(lambda t, y: np.array([y[1], -y[0]]), [0.0, 1.0], (0, 2), n)
        return abs(tr.final[0] - math.sin(2.0))

    ratio = err(20) / err(40)
    assert 14 < ratio < 18


def test_t_eval_recorded():
    ts = [0.0, 0.25, 0.5, 1.0]
    traj = integrate(IvpProblem(lambda t, y: np.ones(1), [0.0], (0.0, 1.0)), t_eval=ts)
    assert np.allclose(traj.times, ts)
    assert np.allclose(traj.states[:, 0], ts, atol=1e-12)


def test_guard_exit_located():
    traj = integrate(IvpProblem(lambda t, y: np.ones(1), [0.0], (0.0, 1.0), guard=lambda t, y: y[0] < 0.5))
    assert traj.exit is not None
    assert traj.exit.t == pytest.approx(0.5, abs=1e-6)
    assert traj.final[0] < 0.5


def test_bad_problems():
    with pytest.raises(ValidationError):
        IvpProblem(lambda t, y: y, [1.0], (1.0, 1.0))
    with pytest.raises(ValidationError):
        IvpProblem(lambda t, y: y, [1.0], (0.0, 1.0), guard=lambda t, y: False)


def test_ou_flow_reaches_stationary_law():
    traj = projected_flow(ExpFamily.monomial(2), SdeModel.ornstein_uhlenbeck(), [1.0, -1.0], (0, 10))
    var = 1.0 - 0.5 * math.exp(-20.0)
    assert np.allclose(traj.final, [0.5 * math.exp(-10.0) / var, -0.5 / var], atol=1e-9)
