import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpe_project import Background, ExpFamily, SdeModel, projected_rhs, residual
from fpe_project.errors import EmptyInput, ValidationError
from fpe_project.fields import Poly
from fpe_project.projection import (
    GalerkinBasis,
    assumed_density_flow,
    assumed_density_rhs,
    galerkin_heat_rhs,
    generator_expectation,
    invariance_scan,
)

gauss = ExpFamily.monomial(2)
ou = SdeModel.ornstein_uhlenbeck()
quartic = ExpFamily.monomial(4)
dw = SdeModel.double_well()


def test_projected_rhs_gaussian_example():
    # mean 0.5, variance 0.5: mu' = -0.5, P' = 1; mapped to theta = (mu/P, -1/(2P))
    v = projected_rhs(gauss, ou, [1.0, -1.0])
    assert np.allclose(v, [-3.0, 2.0], atol=1e-10)


def test_double_well_residual_example():
    r = residual(gauss, dw, [0.0, -0.5])
    assert r.e_alpha2 == pytest.approx(26.0, rel=1e-9)
    assert r.proj_norm2 == pytest.approx(2.0, rel=1e-9)
    assert r.r2 == pytest.approx(24.0, rel=1e-9)


def test_generator_expectation_example():
    # E[L x^2] = 2 - 2 E x^2 = 0 at the stationary law
    assert np.allclose(generator_expectation(gauss, ou, [0.0, -0.5]), [0.0, 0.0], atol=1e-12)


quartic_theta = st.tuples(st.floats(-0.5, 0.5), st.floats(-1.0, 0.5), st.floats(-0.2, 0.2), st.floats(-0.6, -0.1))


@given(quartic_theta)
def test_two_routes_agree(th):
    mom = quartic.moments(th)
    via_eta = assumed_density_rhs(quartic, dw, mom.eta, theta0=th)
    assert np.allclose(via_eta, mom.g @ projected_rhs(quartic, dw, th), atol=1e-9)


def test_assumed_density_flow_matches_gaussian_moments():
    ts = np.linspace(0, 2, 5)
    traj = assumed_density_flow(gauss, ou, [0.5, 0.75], (0, 2), t_eval=ts)
    mu = 0.5 * np.exp(-ts)
    var = 1 - 0.5 * np.exp(-2 * ts)
    assert np.allclose(traj.states, np.column_stack([mu, var + mu**2]), atol=1e-8)


def test_galerkin_example():
    basis = GalerkinBasis([Poly([0, 1]), Poly([-1, 0, 1])], coeff=1.0)
    assert np.allclose(galerkin_heat_rhs(basis, [0.0, 0.0]), [0.0, 1.0], atol=1e-12)
    assert np.allclose(galerkin_heat_rhs(basis, [1.0, -0.5]), [-4.0, 4.0], atol=1e-10)


def test_galerkin_rejects_uncentred_basis():
    with pytest.raises(ValidationError, match="centred"):
        GalerkinBasis([Poly([0, 1]), Poly([0, 0, 1])])


def test_galerkin_matches_divergence_form_sde():
    coeff = Poly([1.0, 0.0, 0.1])
    basis = GalerkinBasis([Poly([0, 1]), Poly([-1, 0, 1])], coeff=coeff)
    th = [0.3, -0.2]
    assert np.allclose(galerkin_heat_rhs(basis, th), projected_rhs(basis.family, SdeModel.divergence_form(coeff), th), atol=1e-10)


def test_invariance_scan():
    grid = [[m, v] for m in (-1.0, 0.0, 1.0) for v in (-1.0, -0.5, -0.25)]
    rep = invariance_scan(gauss, ou, grid)
    assert rep.invariant and rep.max_r2 < 1e-10
    rep = invariance_scan(quartic, dw, [[0.0, -0.5, 0.0, -0.1], [0.0, 0.0, 0.0, 0.1]])
    assert not rep.invariant
    assert len(rep.failures) == 1 and rep.max_r2 > 1e-2


def test_invariance_scan_empty():
    with pytest.raises(EmptyInput):
        invariance_scan(gauss, ou, [])
