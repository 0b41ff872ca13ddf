import dataclasses

import numpy as np
import pytest

from follmer_epi import measures as M
from follmer_epi.diagnostics import (NON_GATING, PAIR_CHECKS, SINGLE_CHECKS, CheckResult, all_passed,
                                     format_table, run_checks, run_pair_checks)
from follmer_epi.entropy import relative_entropy_direct
from follmer_epi.simulate import TimeGrid, moment_curve, simulate_bridge


def _by_name(results):
    return {r.name: r for r in results}


def _gating_failures(results):
    return [(r.name, r.statistic) for r in results if r.applicable and r.gating and not r.passed]


def test_standard_gaussian_all_pass():
    m = M.standard_gaussian(1)
    e = simulate_bridge(m, TimeGrid.geometric(60, 1e-4), 500, seed=1)
    res = run_checks(m, e, moment_curve(e), relative_entropy_direct(m))
    assert [r.name for r in res] == sorted(SINGLE_CHECKS)
    assert all(r.passed for r in res if r.applicable)
    assert max(r.statistic for r in res) <= 1e-6


def test_gaussian_variance_two(gauss2_ensemble, gauss2_curve):
    m = M.gaussian([[2.0]])
    res = run_checks(m, gauss2_ensemble, gauss2_curve, relative_entropy_direct(m))
    assert _gating_failures(res) == []
    byn = _by_name(res)
    assert byn["drift-vv-identity"].passed
    assert byn["talagrand-gaussian"].applicable
    # xi = 1/2, so the 1-uniform lower bound does not apply
    assert not byn["gamma-mean-lower-uniform1"].applicable


def test_quartic_uniform_lower_bound(quartic, quartic_ensemble):
    c = moment_curve(quartic_ensemble)
    res = run_checks(quartic, quartic_ensemble, c, relative_entropy_direct(quartic))
    byn = _by_name(res)
    assert byn["gamma-mean-lower-uniform1"].applicable and byn["gamma-mean-lower-uniform1"].passed
    assert byn["gamma-upper-uniform"].passed and byn["gamma-upper-logconcave"].passed
    assert _gating_failures(res) == []


def test_checks_detect_a_corrupted_drift(gauss2_ensemble, gauss2_curve):
    # a drift that is 10% too large breaks the v-v identity
    m = M.gaussian([[2.0]])
    bad = dataclasses.replace(gauss2_ensemble, drift=1.1 * gauss2_ensemble.drift)
    res = _by_name(run_checks(m, bad, gauss2_curve, relative_entropy_direct(m), only=["drift-vv-identity"]))
    assert not res["drift-vv-identity"].passed


def test_checks_are_deterministic(quartic, quartic_ensemble):
    c = moment_curve(quartic_ensemble)
    d = relative_entropy_direct(quartic)
    a = [r.to_dict() for r in run_checks(quartic, quartic_ensemble, c, d)]
    b = [r.to_dict() for r in run_checks(quartic, quartic_ensemble, c, d)]
    assert a == b


def test_pair_checks_on_whitened_gaussians():
    grid = TimeGrid.geometric(80, 1e-4)
    mx, my = M.gaussian([[1.5]]), M.gaussian([[0.5]])
    ex, ey = simulate_bridge(mx, grid, 2000, seed=1), simulate_bridge(my, grid, 2000, seed=2)
    res = run_pair_checks(mx, my, ex, ey, moment_curve(ex), moment_curve(ey),
                          relative_entropy_direct(mx), relative_entropy_direct(my))
    assert [r.name for r in res] == sorted(PAIR_CHECKS)
    assert all(r.applicable for r in res)
    assert _gating_failures(res) == []


def test_non_gating_failures_do_not_fail_the_suite():
    ok = CheckResult("gamma-psd", 0.1, 1.0, True)
    soft = CheckResult("small-time-drift-s2", 2.0, 1.0, False, gating=False)
    hard = CheckResult("gamma-psd", 2.0, 1.0, False)
    skipped = CheckResult("gamma-mean-lower-uniform1", 0.0, 1.0, True, applicable=False)
    assert all_passed([ok, soft, skipped])
    assert not all_passed([ok, hard])
    assert {"small-time-drift-s2", "small-time-drift-xi"} == set(NON_GATING)
    table = format_table([ok, soft, skipped, hard])
    assert "fail (non-gating)" in table and "n/a" in table and "FAIL" in table


@pytest.mark.parametrize("name", ["small-time-drift-s2", "small-time-drift-xi"])
def test_small_time_checks_are_reported_non_gating(name, gauss2_ensemble, gauss2_curve):
    m = M.gaussian([[2.0]])
    res = run_checks(m, gauss2_ensemble, gauss2_curve, relative_entropy_direct(m), only=[name])
    assert len(res) == 1 and res[0].name == name and not res[0].gating


def test_statistic_ratio_locates_worst_node(gauss2_ensemble, gauss2_curve):
    m = M.gaussian([[2.0]])
    r = run_checks(m, gauss2_ensemble, gauss2_curve, relative_entropy_direct(m), only=["gamma-mean-ode"])[0]
    assert r.threshold == 1.0
    assert 0.0 <= r.context["worst_t"] < 1.0
    assert np.isfinite(r.statistic)
