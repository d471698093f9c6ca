import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sci

from fpe_project.errors import InfeasibleTheta, NoConvergence, SingularFisher
from fpe_project.expfam import Background, ExpFamily, gaussian_from_theta, gaussian_theta
from fpe_project.fields import Poly

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
# frozen from an mpmath quadrature of exp(-y^4/4) over the real line
Z4 = 2.563693352040847

gauss_fam = ExpFamily.monomial(2)
means = st.floats(-2.0, 2.0)
variances = st.floats(0.2, 4.0)


def test_z4_oracle_matches_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 30
    z = mpmath.quad(lambda y: mpmath.exp(-(y**4) / 4), [-mpmath.inf, 0, mpmath.inf])
    assert abs(float(z) - Z4) < 1e-14


def test_log_partition_examples():
    assert abs(gauss_fam.log_partition([0.0, -0.5]) - LOG_SQRT_2PI) < 1e-12
    assert abs(ExpFamily.monomial(2, Background.gaussian()).log_partition([0.0, 0.0])) < 1e-12
    with pytest.raises(InfeasibleTheta):
        gauss_fam.log_partition([0.0, 0.5])


def test_mean_params_examples():
    assert np.allclose(gauss_fam.mean_params([0.0, -0.5]), [0.0, 1.0], atol=1e-12)
    assert np.allclose(gauss_fam.mean_params(gaussian_theta(1.0, 2.0)), [1.0, 3.0], atol=1e-11)
    assert gauss_fam.mean_params([0.0, -0.5])[0] == pytest.approx(0.0, abs=1e-14)


def test_fisher_examples():
    g = gauss_fam.fisher_matrix([0.0, -0.5])
    assert np.allclose(g, [[1.0, 0.0], [0.0, 2.0]], atol=1e-11)
    assert np.array_equal(g, g.T)
    dup = ExpFamily([Poly.x(), Poly.x(), Poly.monomial(2)])
    with pytest.raises(SingularFisher):
        dup.fisher_matrix([0.0, 0.0, -0.5])


def test_natural_from_mean_examples():
    assert np.allclose(gauss_fam.natural_from_mean([0.0, 1.0]), [0.0, -0.5], atol=1e-10)
    with pytest.raises(NoConvergence):
        gauss_fam.natural_from_mean([0.0, -1.0])


def test_log_density_examples():
    assert gauss_fam.log_density([0.0, -0.5], 0.0) == pytest.approx(-LOG_SQRT_2PI, abs=1e-12)
    fam = ExpFamily.monomial(2, Background.gaussian())
    x = np.linspace(-3, 3, 7)
    assert np.allclose(fam.log_density([0.0, 0.0], x), -0.5 * x * x - LOG_SQRT_2PI, atol=1e-12)
    fam4 = ExpFamily.monomial(2, Background.generalized(4))
    assert np.allclose(fam4.log_density([0.0, 0.0], x), -(x**4) / 4 - math.log(Z4), atol=1e-12)


def test_generalized_background_needs_even_m():
    with pytest.raises(ValueError):
        Background.generalized(3)
    with pytest.raises(ValueError):
        Background.generalized(2)


def test_project_onto_tangent_examples():
    th = [0.0, -0.5]
    mom = gauss_fam.moments(th)
    assert np.allclose(gauss_fam.project_onto_tangent(th, Poly.x() - mom.eta[0]), [1.0, 0.0], atol=1e-10)
    assert np.allclose(gauss_fam.project_onto_tangent(th, Poly([7.0])), [0.0, 0.0], atol=1e-12)
    assert np.allclose(gauss_fam.project_onto_tangent(th, Poly.monomial(3)), [3.0, 0.0], atol=1e-10)


families = [
    (ExpFamily.monomial(2), lambda th: th),
    (ExpFamily.monomial(4), lambda th: th),
    (ExpFamily.hermite(4, Background.gaussian()), lambda th: th),
    (ExpFamily.monomial(2, Background.generalized(4)), lambda th: th),
]


def random_theta(fam, rng):
    if fam.background.kind == "lebesgue":
        th = rng.uniform(-0.5, 0.5, fam.n)
        th[-1] = -rng.uniform(0.2, 1.0)
    else:
        th = rng.uniform(-0.3, 0.3, fam.n)
        th[-1] = -abs(th[-1])
    return th


@pytest.mark.parametrize("fam", [f for f, _ in families], ids=["gauss", "quartic", "hermite4", "gen4"])
def test_gradient_and_hessian_of_psi(fam):
    rng = np.random.default_rng(11)

    def grad_fd(th, h):
        out = np.zeros(fam.n)
        for i in range(fam.n):
            e = np.zeros(fam.n)
            e[i] = h
            out[i] = (fam.log_partition(th + e) - fam.log_partition(th - e)) / (2 * h)
        return out

    for _ in range(5):
        th = random_theta(fam, rng)
        mom = fam.moments(th)
        coarse, fine = grad_fd(th, 1e-3), grad_fd(th, 1e-4)
        # O(h^2): a tenfold smaller step cuts the error ~100x
        err_c, err_f = np.abs(coarse - mom.eta), np.abs(fine - mom.eta)
        assert np.all(err_f <= 0.02 * err_c + 1e-7)
        assert np.allclose(grad_fd(th, 1e-5), mom.eta, rtol=1e-5, atol=1e-6)

        h = 1e-5
        hess = np.zeros((fam.n, fam.n))
        for i in range(fam.n):
            e = np.zeros(fam.n)
            e[i] = h
            hess[i] = (fam.mean_params(th + e) - fam.mean_params(th - e)) / (2 * h)
        assert np.max(np.abs(hess - mom.g)) <= 1e-4 * np.max(np.abs(mom.g))


@pytest.mark.parametrize("fam", [f for f, _ in families], ids=["gauss", "quartic", "hermite4", "gen4"])
def test_density_normalised(fam):
    th = random_theta(fam, np.random.default_rng(3))
    z, _ = sci.quad(lambda x: float(fam.density(th, x)), -np.inf, np.inf, epsabs=1e-13, limit=200)
    assert abs(z - 1) < 1e-8


@given(means, variances)
def test_round_trip_gaussian(mu, var):
    th = gaussian_theta(mu, var)
    eta = gauss_fam.mean_params(th)
    back = gauss_fam.natural_from_mean(eta, tol=1e-11)
    assert np.allclose(back, th, rtol=1e-7, atol=1e-8)
    assert np.allclose(gaussian_from_theta(back), (mu, var), rtol=1e-7, atol=1e-8)


@given(st.floats(-0.4, 0.4), st.floats(-0.5, 0.5), st.floats(-0.3, 0.3), st.floats(0.05, 0.5))
def test_round_trip_quartic(a, b, c, d):
    fam = ExpFamily.monomial(4)
    th = np.array([a, b, c, -d])
    eta = fam.mean_params(th)
    back = fam.natural_from_mean(eta, tol=1e-11)
    assert np.allclose(fam.mean_params(back), eta, atol=1e-10)
    assert np.allclose(back, th, rtol=1e-5, atol=1e-6)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_projection_is_idempotent(w1, w2):
    th = [0.2, -0.7]
    mom = gauss_fam.moments(th)
    U = w1 * (Poly.x() - mom.eta[0]) + w2 * (Poly.monomial(2) - mom.eta[1])
    assert np.allclose(gauss_fam.project_onto_tangent(th, U), [w1, w2], atol=1e-8)


def test_feasibility_checks():
    assert gauss_fam.is_feasible([0.0, -0.1])
    assert not gauss_fam.is_feasible([0.0, 0.0])
    assert not ExpFamily.monomial(3).is_feasible([0.0, 0.0, -1.0])
    assert ExpFamily.monomial(2, Background.generalized(4)).is_feasible([0.0, 3.0])
