"""Acceptance criteria, each evaluated at its stated tolerance.

Every test prints one line ``ACCEPTANCE <n> PASS|FAIL <detail>`` before asserting.
"""
import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from follmer_epi import measures as M
from follmer_epi.bounds import gaussian_surrogates, matrix_gap, thm5_coefficient
from follmer_epi.diagnostics import run_checks
from follmer_epi.entropy import deficit, deficit_monte_carlo, relative_entropy_direct, relative_entropy_drift, \
    relative_entropy_gamma
from follmer_epi.harness import config as C
from follmer_epi.harness.cli import main
from follmer_epi.harness.runner import RunOptions, run_scenario
from follmer_epi.simulate import TimeGrid, moment_curve, simulate_bridge

LAMBDAS = (0.1, 0.25, 0.5, 0.75, 0.9)
EIGEN_CHECKS = ("gamma-upper-logconcave", "gamma-upper-uniform", "gamma-mean-lower-uniform1",
                "gamma-mean-lower-poincare")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def library():
    """Every bundled scenario run from scratch with its own settings."""
    out = {}
    for name in C.bundled_names():
        scn = C.load(name)
        result = run_scenario(scn, RunOptions(use_cache=False))
        out[name] = (scn, result)
    return out


def test_1_three_route_entropy(verdict):
    start = time.perf_counter()
    m = M.gaussian([[2.0]])
    e = simulate_bridge(m, TimeGrid.geometric(200, 1e-4), 100_000, seed=2024)
    drift, gamma = relative_entropy_drift(m, e), relative_entropy_gamma(m, e)
    direct = relative_entropy_direct(m)
    elapsed = time.perf_counter() - start
    exact = 0.5 * (2.0 - 1.0 - math.log(2.0))
    errs = [abs(est.value - exact) for est in (drift, gamma, direct)]
    tols = [max(2 * est.stderr, 1e-3) for est in (drift, gamma, direct)]
    ok = all(a <= b for a, b in zip(errs, tols)) and elapsed < 120
    verdict(1, ok, f"drift={drift.value:.6f} gamma={gamma.value:.6f} direct={direct.value:.6f} "
                   f"exact={exact:.6f} max_err/tol={max(a / b for a, b in zip(errs, tols)):.3f} time={elapsed:.1f}s")


def test_2_matrix_lemma(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        qa, qb = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        a = qa @ qa.T / d + 0.05 * np.eye(d)
        b = qb @ qb.T / d + 0.05 * np.eye(d)
        lam = float(rng.uniform(0.01, 0.99))
        lhs, rhs = matrix_gap(a, b, lam)
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-10, f"max relative error {worst:.2e} over 1000 pairs, time={elapsed:.1f}s")


def test_3_equality_case(verdict):
    grid = TimeGrid.geometric(200, 1e-4)
    worst_closed, worst_mc = 0.0, 0.0
    ok = True
    for var in (0.5, 1.0, 2.0):
        for dim in (1, 2):
            m = M.gaussian(var * np.eye(dim))
            for lam in LAMBDAS:
                worst_closed = max(worst_closed, abs(deficit(m, m, lam).deficit))
            rep = deficit_monte_carlo(m, m, 0.5, grid, 20_000, seed=int(10 * var) + dim)
            ok &= abs(rep.deficit) <= rep.budget
            worst_mc = max(worst_mc, abs(rep.deficit) / rep.budget if rep.budget > 0 else 0.0)
    ok &= worst_closed <= 1e-8
    verdict(3, ok, f"closed-form max |deficit|={worst_closed:.2e}; Monte Carlo max |deficit|/budget={worst_mc:.3f}")


def test_4_theorem_ladder(library, verdict):
    failures, applicable = [], 0
    for name, (scn, result) in library.items():
        lams = sorted(d["lambda"] for d in result.report["deficits"])
        if tuple(lams) != LAMBDAS:
            failures.append(f"{name}: lambdas {lams}")
        for rep in result.report["deficits"]:
            for b in rep["bounds"]:
                if b["applicable"] and not b["display_only"]:
                    applicable += 1
                    if not b["passed"]:
                        failures.append(f"{name} lambda={rep['lambda']} {b['name']} margin={b['margin']:.3g}")
    pair = [d for d in library["gaussian-pair"][1].report["deficits"] if d["lambda"] == 0.5][0]
    margins = {b["name"]: b for b in pair["bounds"]}
    wanted = ["lemma-jump", "jump-ct", "thm3"] + (["thm5"] if margins["thm5"]["applicable"] else [])
    for n in wanted:
        if not (margins[n]["applicable"] and margins[n]["margin"] > 0):
            failures.append(f"gaussian-pair {n} margin not positive")
    if abs(pair["deficit"] - 0.11157) > 1e-4:
        failures.append(f"gaussian-pair deficit {pair['deficit']}")
    ok = len(library) >= 8 and not failures
    verdict(4, ok, f"{len(library)} scenarios, {applicable} applicable bound evaluations, "
                   f"gaussian-pair deficit={pair['deficit']:.6f}; failures: {failures or 'none'}")


def test_5_identity_suite_quartic(verdict):
    m = M.quartic(1, 1.0, 1.0)
    e = simulate_bridge(m, TimeGrid.geometric(100, 1e-4), 100_000, seed=55)
    res = run_checks(m, e, moment_curve(e), relative_entropy_direct(m),
                     only=["drift-vv-identity", "gamma-mean-ode"])
    ok = len(res) == 2 and all(r.passed for r in res)
    verdict(5, ok, " ".join(f"{r.name}={r.statistic:.3f}" for r in res) + " (threshold 1)")


def test_6_eigenvalue_checks(library, verdict):
    failures, count = [], 0
    for name, (scn, result) in library.items():
        subjects = {"X": result.workspace.mx, "Y": result.workspace.my}
        for row in result.report["checks"]:
            if row["name"] not in EIGEN_CHECKS or row["subject"] not in subjects:
                continue
            if not subjects[row["subject"]].log_concave or not row["applicable"]:
                continue
            count += 1
            if not row["passed"]:
                failures.append(f"{name}/{row['subject']} {row['name']}={row['statistic']:.3f}")
    verdict(6, count > 0 and not failures, f"{count} applicable eigenvalue checks; failures: {failures or 'none'}")


def test_7_gaussian_fixed_point(verdict):
    grid = TimeGrid.geometric(200, 1e-4)
    worst = 0.0
    for cov in ([[0.5]], [[2.0]], [[1.5, 0.4], [0.4, 0.7]], np.eye(2)):
        m = M.gaussian(cov)
        c = moment_curve(simulate_bridge(m, grid, 100, seed=1))
        gx, _ = gaussian_surrogates(c, c)
        worst = max(worst, float(np.max(np.abs(gx - np.asarray(cov)))))
    verdict(7, worst <= 1e-6, f"max |G_X - Cov(X)| = {worst:.2e}")


def test_8_thm5(library, verdict):
    lam = np.linspace(0.01, 0.99, 99)[:, None]
    cp = np.r_[1.0, np.geomspace(1.0 + 1e-9, 1e4, 300)][None, :]
    gap = thm5_coefficient(lam, cp) - lam * (1.0 - lam) / cp
    failures = []
    count = 0
    for name, (scn, result) in library.items():
        if not result.workspace.my.is_standard_gaussian:
            continue
        for rep in result.report["deficits"]:
            b = [b for b in rep["bounds"] if b["name"] == "thm5"][0]
            if b["applicable"]:
                count += 1
                if not b["passed"]:
                    failures.append(f"{name} lambda={rep['lambda']}")
    ok = gap.min() >= -1e-12 and count >= len(LAMBDAS) and not failures
    verdict(8, ok, f"min coefficient - lam(1-lam)/Cp = {gap.min():.2e} over {gap.size} points; "
                   f"{count} thm5 certifications against G; failures: {failures or 'none'}")


def _numbers(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_numbers(v, f"{prefix}.{k}"))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_numbers(v, f"{prefix}[{i}]"))
    elif isinstance(obj, (int, float)) and not isinstance(obj, bool):
        out[prefix] = float(obj)
    return out


def test_9_reproducibility(tmp_path, verdict):
    runner = CliRunner()
    dirs = {k: tmp_path / k for k in ("a", "b", "t8")}
    codes = [runner.invoke(main, ["run", "quartic-vs-gaussian", "--out", str(dirs["a"]), "--no-cache"]).exit_code,
             runner.invoke(main, ["run", "quartic-vs-gaussian", "--out", str(dirs["b"]), "--no-cache"]).exit_code,
             runner.invoke(main, ["run", "quartic-vs-gaussian", "--out", str(dirs["t8"]), "--no-cache",
                                  "--threads", "8"]).exit_code]
    same = all((dirs["a"] / f).read_bytes() == (dirs["b"] / f).read_bytes()
               for f in ("report.json", "summary.csv", "checks.json", "curve_X.csv"))
    na = _numbers(json.loads((dirs["a"] / "report.json").read_text()))
    n8 = _numbers(json.loads((dirs["t8"] / "report.json").read_text()))
    worst = max((abs(na[k] - n8[k]) / max(1.0, abs(na[k])) for k in na), default=0.0) if na.keys() == n8.keys() \
        else math.inf
    ok = codes == [0, 0, 0] and same and worst <= 1e-12
    verdict(9, ok, f"exit codes {codes}, identical-seed byte-identical={same}, "
                   f"threads 1 vs 8 max relative difference={worst:.1e}")
