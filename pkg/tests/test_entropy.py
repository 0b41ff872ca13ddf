import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from follmer_epi import measures as M
from follmer_epi.entropy import (DeficitReport, EntropyEstimate, convolve, deficit, deficit_monte_carlo,
                                 differential_entropy, relative_entropy_direct, relative_entropy_drift,
                                 relative_entropy_gamma, relative_fisher_information, tail_bound)
from follmer_epi.linalg import gaussian_kl, gaussian_w2_squared
from follmer_epi.simulate import TimeGrid, simulate_bridge

D_N02 = 0.5 * (2.0 - 1.0 - math.log(2.0))
D_N05 = 0.5 * (0.5 - 1.0 - math.log(0.5))
DEFICIT_PAIR = 0.11157177565710485


def test_closed_form_values():
    assert relative_entropy_direct(M.standard_gaussian(1)).value == 0.0
    assert relative_entropy_direct(M.gaussian([[2.0]])).value == pytest.approx(0.153426409720027, abs=1e-12)


def test_gaussian_kl_matches_quadrature():
    # independent oracle: integrate p ln(p/q) on the line
    def logd(x, v):
        return -x * x / (2 * v) - 0.5 * math.log(2 * math.pi * v)
    val, _ = integrate.quad(lambda x: math.exp(logd(x, 2.0)) * (logd(x, 2.0) - logd(x, 1.0)), -40, 40,
                            epsabs=0, epsrel=1e-13)
    assert gaussian_kl(np.array([[2.0]]), np.eye(1)) == pytest.approx(val, rel=1e-10)


def test_direct_quadrature_against_scipy():
    m = M.quartic(1, 1.0, 1.0)
    z, _ = integrate.quad(lambda x: math.exp(-0.5 * x * x - x ** 4), -10, 10, epsabs=0, epsrel=1e-13)

    def integrand(x):
        lp = -0.5 * x * x - x ** 4 - math.log(z)
        lq = -0.5 * x * x - 0.5 * math.log(2 * math.pi)
        return math.exp(lp) * (lp - lq)
    oracle, _ = integrate.quad(integrand, -10, 10, epsabs=0, epsrel=1e-13)
    est = relative_entropy_direct(m)
    assert est.value == pytest.approx(oracle, rel=1e-9)
    assert est.residual < 1e-8


def test_mixture_vs_moment_matched_gaussian():
    m = M.mixture([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
    est = relative_entropy_direct(m, ref_cov=[[2.0]])
    assert 0.0 <= est.value <= 0.06
    # independent oracle by adaptive quadrature
    def p(x):
        return 0.5 * (math.exp(-(x - 1) ** 2 / 2) + math.exp(-(x + 1) ** 2 / 2)) / math.sqrt(2 * math.pi)
    def q(x):
        return math.exp(-x * x / 4) / math.sqrt(4 * math.pi)
    oracle, _ = integrate.quad(lambda x: p(x) * math.log(p(x) / q(x)), -30, 30, epsabs=0, epsrel=1e-12)
    assert est.value == pytest.approx(oracle, abs=1e-6)


def test_fisher_information_gaussian_and_quartic():
    assert relative_fisher_information(M.gaussian([[2.0]])) == pytest.approx(2 - 2 + 0.5)
    m = M.quartic(1, 1.0, 1.0)
    z, _ = integrate.quad(lambda x: math.exp(-0.5 * x * x - x ** 4), -10, 10)
    val, _ = integrate.quad(lambda x: (4 * x ** 3) ** 2 * math.exp(-0.5 * x * x - x ** 4) / z, -10, 10)
    assert relative_fisher_information(m) == pytest.approx(val, rel=1e-8)
    assert tail_bound(m, 1e-4) == pytest.approx(0.5e-4 * val, rel=1e-8)


def test_drift_and_gamma_routes_gaussian(gauss2_ensemble):
    m = M.gaussian([[2.0]])
    for est in (relative_entropy_drift(m, gauss2_ensemble), relative_entropy_gamma(m, gauss2_ensemble)):
        tol = max(2 * est.stderr, 1e-3) * (1 + D_N02)
        assert abs(est.value - D_N02) <= tol, est


def test_routes_agree_on_quartic(quartic, quartic_ensemble):
    direct = relative_entropy_direct(quartic)
    drift = relative_entropy_drift(quartic, quartic_ensemble)
    gamma = relative_entropy_gamma(quartic, quartic_ensemble)
    for est in (drift, gamma):
        # the ensemble routes are truncated at 1 - eps and use a 60-node grid
        assert abs(est.value - direct.value) <= est.budget + direct.budget + 1e-4


def test_standard_gaussian_routes_are_zero():
    e = simulate_bridge(M.standard_gaussian(1), TimeGrid.geometric(50, 1e-4), 500, seed=2)
    m = M.standard_gaussian(1)
    assert relative_entropy_drift(m, e).value == 0.0
    assert relative_entropy_gamma(m, e).value == pytest.approx(0.0, abs=1e-25)


def test_deficit_examples():
    rep = deficit(M.gaussian([[2.0]]), M.gaussian([[0.5]]), 0.5)
    oracle = 0.5 * (D_N02 + D_N05) - 0.5 * (0.25 - math.log(1.25))
    assert oracle == pytest.approx(DEFICIT_PAIR, abs=1e-15)
    assert rep.deficit == pytest.approx(DEFICIT_PAIR, abs=1e-12)
    assert rep.route == "closed-form"


@pytest.mark.parametrize("var", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("dim", [1, 2])
def test_equality_case(var, dim):
    m = M.gaussian(var * np.eye(dim))
    for lam in (0.1, 0.5, 0.9):
        assert abs(deficit(m, m, lam).deficit) <= 1e-8


def test_deficit_small_lambda():
    rep = deficit(M.quartic(1, 1.0, 1.0), M.gaussian([[0.5]]), 1e-6)
    assert rep.deficit <= 1e-4


def test_deficit_potential_pair_nonnegative():
    rep = deficit(M.quartic(1, 1.0, 1.0), M.quartic(1, 1.5, 0.1), 0.5)
    assert rep.deficit >= -rep.budget
    assert rep.route == "direct"


def test_convolution_of_gaussians():
    c = convolve(M.gaussian([[2.0]]), M.gaussian([[0.5]]), 0.5)
    assert c.covariance[0, 0] == pytest.approx(1.25)


def test_differential_entropy_gaussian():
    m = M.gaussian([[2.0]])
    h = differential_entropy(m, relative_entropy_direct(m))
    assert h == pytest.approx(0.5 * math.log(2 * math.pi * math.e * 2.0), abs=1e-12)


def test_monte_carlo_deficit_equality_case():
    m = M.gaussian([[2.0]])
    rep = deficit_monte_carlo(m, m, 0.5, TimeGrid.geometric(100, 1e-4), 5000, seed=3)
    assert abs(rep.deficit) <= rep.budget


def test_attach_certifies_with_tolerance():
    from follmer_epi.bounds import BoundResult
    rep = DeficitReport(0.5, EntropyEstimate(0.1, "x"), EntropyEstimate(0.1, "x"), EntropyEstimate(0.05, "x"),
                        0.05, "direct")
    ok = BoundResult("a", 0.04, True)
    bad = BoundResult("b", 0.06, True)
    rep.attach(ok)
    rep.attach(bad)
    assert ok.passed and not bad.passed
    assert ok.margin == pytest.approx(0.01)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.01, 0.99))
def test_deficit_nonnegative_gaussian(vx, vy, lam):
    rep = deficit(M.gaussian([[vx]]), M.gaussian([[vy]]), lam)
    assert rep.deficit >= -1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 10.0), st.integers(1, 3))
def test_talagrand_gaussian(var, dim):
    cov = var * np.eye(dim)
    assert gaussian_w2_squared(cov, np.eye(dim)) <= 2 * gaussian_kl(cov, np.eye(dim)) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(0.1, 0.9))
def test_deficit_invariant_under_common_linear_map(vx, vy, lam):
    a = np.array([[1.3, 0.4], [0.0, 0.7]])
    mx, my = M.gaussian(np.diag([vx, 1.0])), M.gaussian(np.diag([vy, 0.8]))
    d0 = deficit(mx, my, lam).deficit
    d1 = deficit(M.transform(mx, a), M.transform(my, a), lam).deficit
    assert d1 == pytest.approx(d0, abs=1e-10)
