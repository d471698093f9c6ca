import warnings

import numpy as np
import pytest

from fpe_project import ExpFamily, SdeModel
from fpe_project.errors import EscapedGrid, Overflow, ValidationError
from fpe_project.ode import Trajectory
from fpe_project.oracle import Grid1D
from fpe_project.synth import (
    BLOCK,
    InsufficientPaths,
    PathEnsemble,
    SynthesizedDrift,
    em_bias_ou,
    ensemble_csv_rows,
    modified_drift,
    simulate_em,
    validate_moments,
)

gauss = ExpFamily.monomial(2)
ou = SdeModel.ornstein_uhlenbeck()
grid = Grid1D(-10, 10, 2001)


def test_stationary_ou_recovers_base_drift():
    u = modified_drift(ou, gauss, [0.0, -0.5], grid)
    assert np.max(np.abs(u - (-grid.x))) < 1e-10


def test_heat_needs_no_drift():
    # score term and velocity correction cancel for a spreading Gaussian
    wide = Grid1D(-15, 15, 3001)
    u = modified_drift(SdeModel.heat(2.0), gauss, [0.0, -0.25], wide)
    # the far tails lose relative accuracy where the density is ~1e-20 of its peak
    body = np.abs(wide.x) < 9
    assert np.max(np.abs(u[body])) < 1e-9


def test_non_gaussian_start_shifts_drift():
    u = modified_drift(ou, gauss, [1.0, -1.0], grid)
    assert not np.allclose(u, -grid.x)
    # still linear: an OU process with Gaussian marginals
    coef = np.polyfit(grid.x[900:1100], u[900:1100], 2)
    assert abs(coef[0]) < 1e-8


def test_grid_checks():
    with pytest.raises(ValidationError, match="tails"):
        modified_drift(ou, gauss, [0.0, -0.5], Grid1D(-3, 3, 301))
    with pytest.raises(Overflow):
        modified_drift(ou, gauss, [0.0, -0.5], Grid1D(-100, 100, 2001))


def _normal(rng, size):
    return rng.standard_normal(size)


def _stationary_drift():
    traj = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, -0.5], [0.0, -0.5]]))
    return SynthesizedDrift.build(ou, gauss, traj, grid)


def test_reproducible_across_thread_counts(monkeypatch):
    drift = _stationary_drift()
    n = BLOCK + 100
    monkeypatch.setenv("FPE_PROJECT_THREADS", "1")
    a = simulate_em(drift, _normal, n, 0.05, 0.5, seed=7)
    monkeypatch.setenv("FPE_PROJECT_THREADS", "3")
    b = simulate_em(drift, _normal, n, 0.05, 0.5, seed=7)
    assert np.array_equal(a.terminal_values, b.terminal_values)
    c = simulate_em(drift, _normal, n, 0.05, 0.5, seed=8)
    assert not np.array_equal(a.terminal_values, c.terminal_values)


def test_snapshots_and_moments():
    drift = _stationary_drift()
    ens = simulate_em(drift, _normal, 20000, 1e-2, 1.0, seed=1, record=[0.5, 1.0])
    assert set(ens.snapshots) == {0.5, 1.0}
    assert np.array_equal(ens.snapshots[1.0], ens.terminal_values)
    bias = em_bias_ou(1e-2, 1.0, 0.0, 1.0)
    checks = validate_moments(ens, gauss, [0.0, -0.5], bias)
    assert all(c.passed for c in checks)
    rows = list(ensemble_csv_rows(checks))
    assert rows[0] == ["stat", "empirical", "target", "stderr", "z"] and len(rows) == 3


def test_insufficient_paths_warns():
    ens = PathEnsemble(0, 1, 1e-3, np.array([0.1]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        checks = validate_moments(ens, gauss, [0.0, -0.5])
    assert any(issubclass(w.category, InsufficientPaths) for w in caught)
    assert all(np.isinf(c.stderr) for c in checks)


def test_escaped_paths_raise():
    traj = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, -0.5], [0.0, -0.5]]))
    drift = SynthesizedDrift.build(ou, gauss, traj, grid)
    with pytest.raises(EscapedGrid):
        simulate_em(drift, lambda rng, size: np.full(size, 50.0), 100, 1e-2, 0.1, seed=0)


def test_em_bias_stationary_example():
    # EM variance of OU settles at 2 / (2 - dt)
    dt = 1e-3
    assert em_bias_ou(dt, 50.0, 0.0, 1.0)[1] == pytest.approx(dt / (2 - dt), rel=1e-6)
    assert em_bias_ou(dt, 1.0, 0.0, 1.0)[0] == 0.0


def test_simulate_validation():
    with pytest.raises(ValidationError):
        simulate_em(lambda t, x: -x, _normal, 10, 0.1, 1.0, seed=0)
    with pytest.raises(ValidationError):
        simulate_em(_stationary_drift(), _normal, 0, 0.1, 1.0, seed=0)
