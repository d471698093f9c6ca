import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpe_project import Background, ExpFamily, SdeModel
from fpe_project.errors import NotEigen, SupportMismatch, ValidationError
from fpe_project.expfam import gaussian_theta
from fpe_project.oracle import (
    Grid1D,
    GridDensity,
    eigen_spectrum,
    family_on_grid,
    fpe_solve,
    gaussian_pdf,
    kl_divergence,
    moment_project,
)

grid = Grid1D(-10, 10, 801)
gauss = ExpFamily.monomial(2)


def test_grid_validation():
    assert Grid1D(0, 1, 11).h == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        Grid1D(1, 0, 11)
    with pytest.raises(ValidationError):
        GridDensity(grid, np.zeros(5))


def test_ou_matches_gaussian_flow():
    p0 = GridDensity.gaussian(grid, 1.5, 0.5)
    sol = fpe_solve(SdeModel.ornstein_uhlenbeck(), p0, (0, 1), 1e-3, t_out=[0.5, 1.0])
    for t, d in sol:
        exact = gaussian_pdf(grid.x, 1.5 * np.exp(-t), 1 - 0.5 * np.exp(-2 * t))
        assert np.max(np.abs(d.p - exact)) < 1e-3


def test_heat_variance_grows_linearly():
    wide = Grid1D(-20, 20, 1601)
    sol = fpe_solve(SdeModel.heat(2.0), GridDensity.gaussian(wide), (0, 2), 1e-3, t_out=[1.0, 2.0])
    for t, d in sol:
        assert d.expect(lambda x: x * x) == pytest.approx(1 + 2 * t, rel=1e-4)


def test_stationary_density_is_fixed():
    p0 = GridDensity.gaussian(grid)
    sol = fpe_solve(SdeModel.ornstein_uhlenbeck(), p0, (0, 1), 1e-2, renormalize=False)
    assert np.max(np.abs(sol[-1][1].p - p0.p)) < 1e-4
    assert sol.mass_drift_rate < 1e-6


def test_solver_rejects_truncated_start():
    narrow = Grid1D(-2, 2, 101)
    with pytest.raises(ValidationError, match="boundary"):
        fpe_solve(SdeModel.ornstein_uhlenbeck(), GridDensity.gaussian(narrow), (0, 1), 1e-2)


def test_kl_examples():
    fine = Grid1D(-15, 15, 3001)
    p, q = GridDensity.gaussian(fine, 0, 1), GridDensity.gaussian(fine, 0, 2)
    # (1/2)(1/2 - 1 + ln 2)
    assert kl_divergence(p, q) == pytest.approx(0.0965735902799727, abs=1e-9)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-14)
    assert kl_divergence(p, (gauss, gaussian_theta(0, 2))) == pytest.approx(0.0965735902799727, abs=1e-9)


def test_kl_support_mismatch():
    p = GridDensity.gaussian(grid, 0, 1)
    q = GridDensity(grid, np.where(grid.x > 0, p.p, 0.0))
    with pytest.raises(SupportMismatch):
        kl_divergence(p, q)


def test_moment_project_gaussian():
    theta, eta = moment_project(gauss, GridDensity.gaussian(grid, 1.0, 2.0))
    assert np.allclose(eta, [1.0, 3.0], atol=1e-9)
    assert np.allclose(theta, gaussian_theta(1.0, 2.0), atol=1e-8)


bimodal = GridDensity.mixture(grid, [0.3, 0.7], [-1.5, 1.0], [0.2, 0.5])
theta_hat, _ = moment_project(gauss, bimodal)


@given(st.floats(-1.0, 1.0), st.floats(-1.5, -0.1))
def test_pythagorean_identity(a, b):
    th = np.array([a, b])
    lhs = kl_divergence(bimodal, (gauss, th))
    rhs = kl_divergence(bimodal, (gauss, theta_hat)) + kl_divergence(family_on_grid(gauss, theta_hat, grid), (gauss, th))
    assert lhs == pytest.approx(rhs, abs=1e-8)


def test_eigen_spectrum():
    fam = ExpFamily.hermite(4, Background.gaussian())
    assert eigen_spectrum(fam, SdeModel.ornstein_uhlenbeck()).tolist() == [1.0, 2.0, 3.0, 4.0]
    with pytest.raises(NotEigen):
        eigen_spectrum(gauss, SdeModel.ornstein_uhlenbeck())


def test_csv_round_trip(tmp_path):
    d = GridDensity.gaussian(Grid1D(-5, 5, 41))
    d.to_csv(tmp_path / "p.csv")
    back = GridDensity.from_csv(tmp_path / "p.csv")
    assert back.grid == d.grid
    assert np.array_equal(back.p, d.p)
