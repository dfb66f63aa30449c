import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lowrank_ot.ot_core import (
    DiscreteMarginal,
    IPFPConvergenceError,
    Potentials,
    SurplusMatrix,
    build_surplus,
    coupling_from,
    ipfp,
    welfare,
    welfare_direct,
)

from . import oracles

P11 = math.e / (2 * (1 + math.e))
P12 = 1 / (2 * (1 + math.e))


def uniform(n):
    return DiscreteMarginal.uniform(n)


def test_oracle_fixed_point_agrees_with_closed_form():
    assert oracles.two_by_two_fixed_point() == pytest.approx(P11, abs=1e-13)


# -- build_surplus -----------------------------------------------------------

def test_surplus_zero_affinity():
    rng = np.random.default_rng(0)
    phi = build_surplus(rng.normal(size=(4, 3)), rng.normal(size=(5, 2)), np.zeros((3, 2)))
    assert np.array_equal(phi.values, np.zeros((4, 5)))


def test_surplus_scalar():
    phi = build_surplus([[2.0]], [[3.0]], [[0.5]])
    assert phi.values.tolist() == [[3.0]]


def test_surplus_matches_double_loop():
    rng = np.random.default_rng(1)
    X, Y, A = rng.normal(size=(4, 3)), rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    expected = oracles.surplus_loops(X.tolist(), Y.tolist(), A.tolist())
    np.testing.assert_allclose(build_surplus(X, Y, A).values, expected, rtol=0, atol=1e-12)


def test_surplus_shape_error_is_descriptive():
    with pytest.raises(ValueError, match="shape mismatch"):
        build_surplus(np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)))


def test_surplus_rejects_nonfinite_affinity():
    with pytest.raises(ValueError, match="non-finite"):
        build_surplus(np.ones((3, 2)), np.ones((3, 2)), np.array([[np.nan, 0], [0, 0]]))


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        SurplusMatrix(np.zeros((2, 2)), 0.0)


# -- marginals ----------------------------------------------------------------

def test_marginal_validation():
    with pytest.raises(ValueError):
        DiscreteMarginal(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscreteMarginal(np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        DiscreteMarginal(np.array([]))


def test_ipfp_rejects_zero_weights():
    mu = DiscreteMarginal(np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="strictly positive"):
        ipfp(SurplusMatrix(np.zeros((2, 2))), mu, mu)


# -- ipfp / coupling_from -----------------------------------------------------

def test_ipfp_zero_surplus_gives_product():
    mu1, mu2 = uniform(4), uniform(3)
    phi = SurplusMatrix(np.zeros((4, 3)))
    pi = coupling_from(ipfp(phi, mu1, mu2), phi, mu1, mu2)
    np.testing.assert_allclose(pi.mass, np.full((4, 3), 1 / 12), atol=1e-15)


@pytest.mark.parametrize("c", [0.0, 5.0, -30.0])
def test_ipfp_single_cell(c):
    mu = uniform(1)
    phi = SurplusMatrix(np.array([[c]]))
    pot = ipfp(phi, mu, mu)
    assert coupling_from(pot, phi).mass[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_ipfp_two_by_two_fixed_point():
    mu = uniform(2)
    phi = SurplusMatrix(np.eye(2))
    pot = ipfp(phi, mu, mu, tol=1e-13)
    pi = coupling_from(pot, phi, mu, mu)
    p = oracles.two_by_two_fixed_point()
    np.testing.assert_allclose(pi.mass, [[p, P12], [P12, p]], atol=1e-10)
    assert pi.marginal_residual <= 1e-13


def test_ipfp_matches_level_oracle_on_random_instance():
    rng = np.random.default_rng(2)
    phi_vals = rng.normal(size=(5, 4))
    w1 = rng.uniform(0.5, 1.5, 5)
    w2 = rng.uniform(0.5, 1.5, 4)
    w1 /= w1.sum()
    w2 /= w2.sum()
    expected = oracles.sinkhorn_levels(phi_vals.tolist(), w1.tolist(), w2.tolist())
    mu1, mu2 = DiscreteMarginal(w1), DiscreteMarginal(w2)
    phi = SurplusMatrix(phi_vals)
    pi = coupling_from(ipfp(phi, mu1, mu2, tol=1e-13), phi)
    np.testing.assert_allclose(pi.mass, expected, atol=1e-12)


def test_ipfp_gauge_fixed_and_feasible():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    phi = build_surplus(X, Y, rng.normal(size=(3, 3)))
    mu = uniform(30)
    pot = ipfp(phi, mu, mu, tol=1e-10)
    assert abs(pot.beta.mean()) <= 1e-12
    assert coupling_from(pot, phi, mu, mu).marginal_residual <= 1e-10
    assert pot.residual <= 1e-10


def test_ipfp_large_surplus_does_not_overflow():
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
    # additive offsets push exp(Phi) far past the double range; the interaction stays mild
    X[:, 0] += 400.0
    Y[:, 0] += 3.0
    phi = build_surplus(X, Y, np.array([[1.0, 0.0], [0.0, 0.8]]))
    assert np.max(phi.values) > 710
    mu = uniform(40)
    pot = ipfp(phi, mu, mu, tol=1e-9)
    assert np.all(np.isfinite(pot.alpha))
    assert coupling_from(pot, phi, mu, mu).marginal_residual <= 1e-9


def test_ipfp_nonconvergence_reports_iterations_and_residual():
    rng = np.random.default_rng(5)
    phi = build_surplus(rng.normal(size=(20, 2)), rng.normal(size=(20, 2)), 5 * np.eye(2))
    mu = uniform(20)
    with pytest.raises(IPFPConvergenceError) as info:
        ipfp(phi, mu, mu, tol=1e-12, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.residual > 1e-12


def test_warm_start_reaches_same_coupling():
    rng = np.random.default_rng(6)
    X, Y = rng.normal(size=(25, 3)), rng.normal(size=(25, 3))
    A = rng.normal(size=(3, 3))
    mu = uniform(25)
    cold = ipfp(build_surplus(X, Y, A), mu, mu, tol=1e-12)
    phi2 = build_surplus(X, Y, 1.05 * A)
    warm = ipfp(phi2, mu, mu, tol=1e-12, init=cold)
    ref = ipfp(phi2, mu, mu, tol=1e-12)
    np.testing.assert_allclose(coupling_from(warm, phi2).mass, coupling_from(ref, phi2).mass, atol=1e-12)
    assert warm.iterations < ref.iterations


def test_coupling_identity_is_exact():
    rng = np.random.default_rng(7)
    pot = Potentials(rng.normal(size=4), rng.normal(size=3))
    phi = SurplusMatrix(rng.normal(size=(4, 3)), 0.7)
    pi = coupling_from(pot, phi)
    resid = np.log(pi.mass) - pot.alpha[:, None] - pot.beta[None, :] - phi.values / 0.7
    assert np.max(np.abs(resid)) <= 1e-14
    assert pi.marginal_residual is None


def test_coupling_from_independence_potentials():
    w1 = np.array([0.2, 0.3, 0.5])
    w2 = np.array([0.6, 0.4])
    lb = np.log(w2)
    pot = Potentials(np.log(w1) + lb.mean(), lb - lb.mean())
    pi = coupling_from(pot, SurplusMatrix(np.zeros((3, 2))))
    np.testing.assert_allclose(pi.mass, np.outer(w1, w2), atol=1e-15)


def test_coupling_shape_check():
    with pytest.raises(ValueError):
        coupling_from(Potentials(np.zeros(2), np.zeros(3)), SurplusMatrix(np.zeros((3, 3))))


# -- welfare -------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 7, 50])
def test_welfare_zero_surplus_is_uniform_entropy(n):
    mu = uniform(n)
    phi = SurplusMatrix(np.zeros((n, n)))
    assert welfare(ipfp(phi, mu, mu), phi, mu, mu) == pytest.approx(2 * math.log(n), abs=1e-12)


def test_welfare_single_cell():
    mu = uniform(1)
    phi = SurplusMatrix(np.zeros((1, 1)))
    assert welfare(ipfp(phi, mu, mu), phi, mu, mu) == pytest.approx(0.0, abs=1e-15)
    phi_c = SurplusMatrix(np.array([[2.5]]))
    assert welfare(ipfp(phi_c, mu, mu), phi_c, mu, mu) == pytest.approx(2.5, abs=1e-14)


def test_welfare_two_by_two_closed_form_vs_direct():
    mu = uniform(2)
    phi = SurplusMatrix(np.eye(2))
    pot = ipfp(phi, mu, mu, tol=1e-13)
    p = oracles.two_by_two_fixed_point()
    direct = oracles.welfare_entropy([[p, 0.5 - p], [0.5 - p, p]], [[1.0, 0.0], [0.0, 1.0]])
    assert welfare(pot, phi, mu, mu) == pytest.approx(direct, abs=1e-10)
    assert welfare_direct(coupling_from(pot, phi), phi) == pytest.approx(direct, abs=1e-10)


def test_welfare_requires_unit_temperature():
    mu = uniform(2)
    phi = SurplusMatrix(np.eye(2), 2.0)
    with pytest.raises(ValueError, match="sigma = 1"):
        welfare(ipfp(phi, mu, mu), phi, mu, mu)


# -- properties ----------------------------------------------------------------

small = st.integers(min_value=2, max_value=7)


@st.composite
def instances(draw):
    n1, n2 = draw(small), draw(small)
    vals = draw(arrays(np.float64, (n1, n2), elements=st.floats(-4, 4)))
    return vals


@settings(max_examples=40, deadline=None)
@given(instances())
def test_log_linear_cross_differences(vals):
    n1, n2 = vals.shape
    phi = SurplusMatrix(vals)
    mu1, mu2 = uniform(n1), uniform(n2)
    L = np.log(coupling_from(ipfp(phi, mu1, mu2), phi).mass)
    i, ip, j, jp = 0, n1 - 1, 0, n2 - 1
    lhs = L[i, j] - L[ip, j] - L[i, jp] + L[ip, jp]
    rhs = vals[i, j] - vals[ip, j] - vals[i, jp] + vals[ip, jp]
    assert lhs == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(instances(), st.floats(-50, 50))
def test_gauge_invariance(vals, c):
    n1, n2 = vals.shape
    phi = SurplusMatrix(vals)
    pot = ipfp(phi, uniform(n1), uniform(n2))
    a = coupling_from(pot, phi).mass
    b = coupling_from(pot.shifted(c), phi).mass
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(instances(), st.floats(0.2, 5.0))
def test_temperature_scaling(vals, sigma):
    n1, n2 = vals.shape
    mu1, mu2 = uniform(n1), uniform(n2)
    # |Phi / sigma| stays below 5; colder instances are legitimate but Sinkhorn
    # contracts too slowly there for a property test
    vals = vals * min(1.0, 1.25 * sigma)
    hot = SurplusMatrix(vals, sigma)
    unit = SurplusMatrix(vals / sigma, 1.0)
    a = coupling_from(ipfp(hot, mu1, mu2, max_iter=200_000), hot).mass
    b = coupling_from(ipfp(unit, mu1, mu2, max_iter=200_000), unit).mass
    np.testing.assert_allclose(a, b, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(small, small, st.floats(-100, 100))
def test_constant_surplus_gives_independence(n1, n2, c):
    rng = np.random.default_rng(n1 * 10 + n2)
    w1, w2 = rng.uniform(0.1, 1, n1), rng.uniform(0.1, 1, n2)
    mu1, mu2 = DiscreteMarginal(w1 / w1.sum()), DiscreteMarginal(w2 / w2.sum())
    phi = SurplusMatrix(np.full((n1, n2), c))
    pi = coupling_from(ipfp(phi, mu1, mu2), phi)
    np.testing.assert_allclose(pi.mass, np.outer(mu1.weights, mu2.weights), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(instances())
def test_feasibility_after_success(vals):
    n1, n2 = vals.shape
    mu1, mu2 = uniform(n1), uniform(n2)
    phi = SurplusMatrix(vals)
    pot = ipfp(phi, mu1, mu2, tol=1e-11)
    assert coupling_from(pot, phi, mu1, mu2).marginal_residual <= 1e-11
