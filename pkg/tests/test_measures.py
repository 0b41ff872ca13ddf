import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from follmer_epi import measures as M
from follmer_epi.errors import MeasureError, NotPositiveDefinite


def test_relative_log_density_standard_gaussian_is_zero():
    m = M.standard_gaussian(2)
    x = np.array([[0.0, 0.0], [1.3, -0.7], [4.0, 2.0]])
    np.testing.assert_allclose(M.relative_log_density(m, x), 0.0, atol=1e-14)


def test_relative_log_density_gaussian_variance_two():
    m = M.gaussian([[2.0]])
    assert M.relative_log_density(m, np.zeros((1, 1)))[0] == pytest.approx(-0.34657359, abs=1e-8)


def test_relative_log_density_mixture():
    m = M.mixture([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
    assert M.relative_log_density(m, np.zeros((1, 1)))[0] == pytest.approx(-0.5, abs=1e-12)


@pytest.mark.parametrize("m", [
    M.quartic(1, 1.0, 1.0),
    M.mixture([0.3, 0.7], [[-1.0], [0.5]], [0.4, 0.8]),
    M.quartic(1, 0.5, 0.05),
])
def test_density_integrates_to_one_1d(m):
    mass, _ = integrate.quad(lambda x: math.exp(m.log_density(np.array([[x]]))[0]), -np.inf, np.inf)
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_density_integrates_to_one_2d():
    m = M.transform(M.quartic(2, [1.0, 2.0], [0.5, 0.1]), [[1.0, 0.3], [0.0, 0.8]])
    # relative density times the Gaussian reference is the density itself
    xs = np.linspace(-6, 6, 241)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    logg = -0.5 * np.sum(pts ** 2, axis=-1) - math.log(2 * math.pi)
    dens = np.exp(M.relative_log_density(m, pts) + logg)
    h = xs[1] - xs[0]
    assert dens.sum() * h * h == pytest.approx(1.0, abs=1e-6)


def test_quartic_moments_by_quadrature():
    m = M.quartic(1, 1.0, 1.0)
    z, _ = integrate.quad(lambda x: math.exp(-0.5 * x * x - x ** 4), -np.inf, np.inf)
    m2, _ = integrate.quad(lambda x: x * x * math.exp(-0.5 * x * x - x ** 4), -np.inf, np.inf)
    assert m.covariance[0, 0] == pytest.approx(m2 / z, rel=1e-9)
    assert m.xi == 1.0
    assert m.log_concave


def test_per_axis_quartic_coefficients():
    m = M.quartic(2, [1.0, 0.5], [0.5, 0.05])
    one = M.quartic(1, 0.5, 0.05)
    assert m.covariance[1, 1] == pytest.approx(one.covariance[0, 0], rel=1e-10)
    assert m.covariance[0, 1] == 0.0


def test_sample_gaussian_covariance():
    x = M.sample(M.standard_gaussian(2), 100_000, seed=1)
    cov = np.cov(x.T)
    assert np.linalg.norm(cov - np.eye(2), 2) < 0.05


def test_sample_quartic_mean():
    x = M.sample(M.quartic(1, 1.0, 1.0), 100_000, seed=2)[:, 0]
    assert abs(x.mean()) < 3 * x.std() / math.sqrt(x.size)


def test_sample_mixture_second_moment():
    x = M.sample(M.mixture([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0]), 100_000, seed=3)[:, 0]
    se = (x ** 2).std() / math.sqrt(x.size)
    assert abs((x ** 2).mean() - 2.0) < 3 * se


def test_sample_reproducible():
    m = M.quartic(1, 1.0, 0.5)
    np.testing.assert_array_equal(M.sample(m, 1000, 7), M.sample(m, 1000, 7))
    assert not np.array_equal(M.sample(m, 1000, 7), M.sample(m, 1000, 8))


def test_poincare_bounds():
    p = M.poincare_bound(M.gaussian([[2.0]]))
    assert (p.value, p.flag) == (2.0, "exact")
    p = M.poincare_bound(M.quartic(1, 1.0, 1.0))
    assert (p.value, p.flag) == (1.0, "upper_bound")
    assert M.poincare_bound(M.standard_gaussian(1)).value == 1.0


def test_spectral_gap_oracle_gaussian():
    # the finite-element generator recovers the exact gap 1/sigma^2
    assert M.spectral_gap_1d(M.gaussian([[2.0]])) == pytest.approx(0.5, rel=1e-4)


def test_joint_whiten_examples():
    ax, ay, a = M.joint_whiten(M.standard_gaussian(2), M.standard_gaussian(2))
    np.testing.assert_allclose(a, np.eye(2), atol=1e-14)
    ax, ay, _ = M.joint_whiten(M.gaussian([[3.0]]), M.gaussian([[1.0]]))
    assert ax.covariance[0, 0] == pytest.approx(1.5)
    assert ay.covariance[0, 0] == pytest.approx(0.5)
    ax, ay, _ = M.joint_whiten(M.gaussian(np.diag([2.0, 4.0])), M.gaussian(np.diag([2.0, 0.5])))
    np.testing.assert_allclose(ax.covariance + ay.covariance, 2 * np.eye(2), atol=1e-12)
    np.testing.assert_allclose(ax.covariance, np.diag([1.0, 4.0 / 2.25]), atol=1e-12)


def _spd(draw, d):
    a = np.array(draw(st.lists(st.floats(-2, 2), min_size=d * d, max_size=d * d))).reshape(d, d)
    return a @ a.T + 0.2 * np.eye(d)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_joint_whiten_sums_to_two_identity(data):
    d = data.draw(st.integers(1, 4))
    cx, cy = _spd(data.draw, d), _spd(data.draw, d)
    ax, ay, _ = M.joint_whiten(M.gaussian(cx), M.gaussian(cy))
    np.testing.assert_allclose(ax.covariance + ay.covariance, 2 * np.eye(d), atol=1e-9)


def test_declared_xi_is_spot_checked():
    with pytest.raises(MeasureError):
        M.from_potential(M.QuarticPotential(1, 1.0, 1.0), xi=5.0)


def test_invalid_inputs():
    with pytest.raises(NotPositiveDefinite):
        M.gaussian([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(MeasureError):
        M.mixture([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(MeasureError):
        M.quartic(1, -1.0, 1.0)


def test_mixture_is_recentered():
    m = M.mixture([0.25, 0.75], [[2.0], [0.0]], [1.0, 1.0])
    assert abs(m.weights @ m.means[:, 0]) < 1e-15
    assert not m.log_concave
