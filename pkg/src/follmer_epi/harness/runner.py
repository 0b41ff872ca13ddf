"""Scenario orchestration: measures, ensembles, entropies, deficits, bounds, checks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .. import bounds as B
from ..diagnostics import PAIR_CHECKS, SINGLE_CHECKS, all_passed, run_checks, run_pair_checks
from ..entropy import (deficit, differential_entropy, relative_entropy_direct, relative_entropy_drift,
                       relative_entropy_gamma, tail_bound)
from ..errors import (DegenerateCovariance, FollmerEPIError, HypothesisViolated, PoincareUnavailable)
from ..measures import Measure, joint_whiten
from ..simulate import (PathEnsemble, derive_seed, ensemble_key, load_ensemble, moment_curve,
                        save_ensemble, simulate_bridge, simulate_euler)
from .config import Scenario, build_measure

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
SUMMATION_TOLERANCE = 1e-12
ISOTROPY_TOL = 1e-6

# substream keys for the ensembles of one scenario
KEY_X, KEY_Y, KEY_COR2_X, KEY_COR2_Y = 101, 102, 103, 104


class ScenarioError(FollmerEPIError):
    """A module error raised while running a scenario, with the scenario name attached."""


class CacheMiss(FollmerEPIError):
    pass


@dataclass
class RunOptions:
    threads: int = 1
    cache_dir: Path | None = None
    use_cache: bool = True
    require_cache: bool = False


@dataclass
class Workspace:
    """Everything computed for one scenario; filled lazily."""

    scn: Scenario
    opts: RunOptions
    mx: Measure = None
    my: Measure = None
    ensembles: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    entropies: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mx = build_measure(self.scn.measure_x, "measure_x")
        self.my = build_measure(self.scn.measure_y, "measure_y")
        if self.scn.whiten:
            self.mx, self.my, _ = joint_whiten(self.mx, self.my)
        self.grid = self.scn.grid()

    # -- ensembles ------------------------------------------------------
    def ensemble(self, label: str, m: Measure, key: int) -> PathEnsemble:
        if label in self.ensembles:
            return self.ensembles[label]
        seed = derive_seed(self.scn.seed, key)
        method = self.scn.method
        path = None
        if self.opts.cache_dir is not None and self.opts.use_cache:
            path = Path(self.opts.cache_dir) / f"{ensemble_key(m, self.grid, self.scn.n_paths, seed, method)}.npz"
            if path.is_file():
                log.info("cache hit for %s (%s)", label, path.name)
                e = load_ensemble(path)
                self.ensembles[label] = e
                return e
        if self.opts.require_cache:
            raise CacheMiss(f"no cached ensemble for {label}; run the scenario first")
        log.info("simulating %s: %d paths, %d nodes", label, self.scn.n_paths, self.grid.size)
        sim = simulate_bridge if method == "bridge" else simulate_euler
        e = sim(m, self.grid, self.scn.n_paths, seed, self.opts.threads)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_ensemble(e, path)
        self.ensembles[label] = e
        return e

    def curve(self, label: str):
        if label not in self.curves:
            self.curves[label] = moment_curve(self.ensembles[label])
        return self.curves[label]

    def pair(self):
        ex = self.ensemble("X", self.mx, KEY_X)
        ey = self.ensemble("Y", self.my, KEY_Y)
        return ex, ey, self.curve("X"), self.curve("Y")

    # -- entropies ------------------------------------------------------
    def direct(self, label: str, m: Measure):
        if label not in self.entropies:
            self.entropies[label] = relative_entropy_direct(m)
        return self.entropies[label]


def _entropy_block(m: Measure, e: PathEnsemble, direct) -> dict:
    tail = tail_bound(m, e.grid.epsilon)
    drift = relative_entropy_drift(m, e, tail)
    gamma = relative_entropy_gamma(m, e, tail)
    return {"direct": direct.to_dict(), "drift-energy": drift.to_dict(), "gamma-identity": gamma.to_dict(),
            "differential_entropy": differential_entropy(m, direct)}


def _isotropic(m: Measure) -> bool:
    return float(np.max(np.abs(m.covariance - np.eye(m.dim)))) <= ISOTROPY_TOL


def _auto_rule(mx: Measure, my: Measure, rule: str):
    if rule != "auto":
        return rule
    if mx.xi is not None and my.xi is not None and min(mx.xi, my.xi) > 0:
        return "uniform"
    return "log-concave"


def _guard(name: str, fn):
    try:
        return fn()
    except (HypothesisViolated, PoincareUnavailable, DegenerateCovariance) as exc:
        return B.BoundResult(name, 0.0, False, f"{type(exc).__name__}: {exc}")


def evaluate_bounds(ws: Workspace, lam: float) -> list:
    scn, mx, my = ws.scn, ws.mx, ws.my
    ex, ey, cx, cy = ws.pair()
    dx, dy = ws.direct("X", mx), ws.direct("Y", my)
    out = []
    for name in B.BOUND_NAMES:
        if name not in scn.bounds:
            continue
        if name == "lemma-jump":
            res = _guard(name, lambda: B.jump_bound(ex, ey, lam))
        elif name == "jump-ct":
            rule = _auto_rule(mx, my, scn.jump_ct_rule)
            res = _guard(name, lambda: B.jump_bound_ct(ex, ey, lam, rule, mx, my))
        elif name == "thm1":
            res = _guard(name, lambda: B.thm1_rhs(mx, my, cx, cy, lam))
        elif name == "cor2":
            res = _cor2(ws, lam)
        elif name == "thm3":
            res = _thm3(ws, lam)
        elif name == "thm4":
            res = _guard(name, lambda: B.thm4_rhs(mx, my, lam, dx, dy, cp=scn.thm4_cp))
        elif name == "thm5":
            res = _thm5(ws, lam)
        else:
            res = _guard(name, lambda: B.wasserstein_thm_rhs(mx, my, cx, cy, lam))
        out.append(res)
    if mx.fingerprint() == my.fingerprint() and abs(lam - 0.5) < 1e-12:
        out.append(B.ball_nguyen_display(mx, dx))
    if scn.display_only:
        for b in out:
            b.display_only = True
    return out


def _cor2(ws: Workspace, lam: float):
    mx, my = ws.mx, ws.my
    if not (_isotropic(mx) and _isotropic(my)):
        return B.BoundResult("cor2", 0.0, False, "both measures must be isotropic (Cov = I within 1e-6)")
    xi = ws.scn.cor2_xi
    if xi is None:
        if mx.xi is None or my.xi is None:
            return B.BoundResult("cor2", 0.0, False, "no uniform log-concavity parameter declared")
        xi = min(mx.xi, my.xi)
    sx, sy = B.cor2_measures(mx, my, xi)
    ws.ensemble("Xs", sx, KEY_COR2_X)
    ws.ensemble("Ys", sy, KEY_COR2_Y)
    return _guard("cor2", lambda: B.cor2_rhs(mx, my, ws.curve("Xs"), ws.curve("Ys"), lam, xi))


def _thm3(ws: Workspace, lam: float):
    """Evaluated on the jointly whitened pair; the deficit is invariant under a common linear map."""
    if "whitened" not in ws.entropies:
        wx, wy, a = joint_whiten(ws.mx, ws.my)
        ws.entropies["whitened"] = (wx, wy, relative_entropy_direct(wx), relative_entropy_direct(wy))
    wx, wy, dwx, dwy = ws.entropies["whitened"]
    res = _guard("thm3", lambda: B.thm3_rhs(wx, wy, lam, dwx, dwy))
    res.inputs["evaluated_on"] = "jointly whitened pair"
    return res


def _thm5(ws: Workspace, lam: float):
    mx, my = ws.mx, ws.my
    cp = ws.scn.thm5_cp
    if my.is_standard_gaussian:
        return _guard("thm5", lambda: B.thm5_rhs(mx, lam, ws.direct("X", mx), cp=cp, my=my))
    if mx.is_standard_gaussian:
        # the deficit is symmetric under (X, Y, lam) -> (Y, X, 1 - lam)
        res = _guard("thm5", lambda: B.thm5_rhs(my, 1.0 - lam, ws.direct("Y", my), cp=cp, my=mx))
        res.inputs["roles"] = "swapped"
        return res
    return B.BoundResult("thm5", 0.0, False, "one of the measures must be the standard Gaussian")


def _split_checks(requested):
    single = [c for c in requested if c in SINGLE_CHECKS]
    pair = [c for c in requested if c in PAIR_CHECKS]
    return single, pair


def evaluate_checks(ws: Workspace) -> list[dict]:
    ex, ey, cx, cy = ws.pair()
    dx, dy = ws.direct("X", ws.mx), ws.direct("Y", ws.my)
    single, pair = _split_checks(ws.scn.checks)
    rows = []
    if single:
        for label, m, e, c, d in (("X", ws.mx, ex, cx, dx), ("Y", ws.my, ey, cy, dy)):
            rows.extend((label, r) for r in run_checks(m, e, c, d, only=single))
    if pair:
        rows.extend(("pair", r) for r in run_pair_checks(ws.mx, ws.my, ex, ey, cx, cy, dx, dy) if r.name in pair)
    return rows


@dataclass
class RunResult:
    report: dict
    checks: list
    workspace: Workspace
    passed: bool


def _wrap(scn: Scenario, fn):
    try:
        return fn()
    except ScenarioError:
        raise
    except FollmerEPIError as exc:
        raise ScenarioError(f"scenario {scn.name!r}: {type(exc).__name__}: {exc}") from exc


def run_scenario(scn: Scenario, opts: RunOptions | None = None) -> RunResult:
    """Execute a scenario end to end and assemble the report document."""
    opts = opts or RunOptions()
    return _wrap(scn, lambda: _run(scn, opts))


def _run(scn: Scenario, opts: RunOptions) -> RunResult:
    ws = Workspace(scn, opts)
    ex, ey, cx, cy = ws.pair()
    dx, dy = ws.direct("X", ws.mx), ws.direct("Y", ws.my)
    deficits = []
    bounds_ok = True
    for lam in scn.lambdas:
        rep = deficit(ws.mx, ws.my, lam, entropies=(dx, dy))
        rep.provenance.update(seeds=[ex.seed, ey.seed], grid=ws.grid.describe(), n_paths=scn.n_paths)
        for b in evaluate_bounds(ws, lam):
            rep.attach(b)
            if b.applicable and not b.display_only and not b.passed:
                bounds_ok = False
        deficits.append(rep.to_dict())
    checks = evaluate_checks(ws)
    check_rows = [dict(subject=s, **r.to_dict()) for s, r in checks]
    checks_ok = all_passed([r for _, r in checks])
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "package_version": __version__,
        "scenario": scn.name,
        "config": scn.normalized(),
        "measures": {"X": ws.mx.describe() | {"fingerprint": ws.mx.fingerprint()},
                     "Y": ws.my.describe() | {"fingerprint": ws.my.fingerprint()}},
        "grid": ws.grid.describe(),
        "ensembles": {k: e.provenance() for k, e in sorted(ws.ensembles.items())},
        "entropies": {"X": _entropy_block(ws.mx, ex, dx), "Y": _entropy_block(ws.my, ey, dy)},
        "deficits": deficits,
        "checks": check_rows,
        "summation_tolerance": SUMMATION_TOLERANCE,
        "status": {"bounds_passed": bounds_ok, "checks_passed": checks_ok,
                   "passed": bounds_ok and checks_ok},
    }
    return RunResult(report, checks, ws, bounds_ok and checks_ok)


def run_entropy(scn: Scenario, which: str, opts: RunOptions | None = None) -> dict:
    """The three entropy routes for one measure of the scenario."""
    opts = opts or RunOptions()

    def go():
        ws = Workspace(scn, opts)
        m, key = (ws.mx, KEY_X) if which == "X" else (ws.my, KEY_Y)
        e = ws.ensemble(which, m, key)
        block = _entropy_block(m, e, ws.direct(which, m))
        return {"schema_version": REPORT_SCHEMA_VERSION, "package_version": __version__,
                "scenario": scn.name, "measure": which, "fingerprint": m.fingerprint(),
                "grid": ws.grid.describe(), "ensemble": e.provenance(), "entropies": block}
    return _wrap(scn, go)


def run_curves(scn: Scenario, opts: RunOptions | None = None) -> Workspace:
    opts = opts or RunOptions()

    def go():
        ws = Workspace(scn, opts)
        ws.pair()
        return ws
    return _wrap(scn, go)


def run_checks_only(scn: Scenario, opts: RunOptions | None = None):
    opts = opts or RunOptions()

    def go():
        ws = Workspace(scn, opts)
        checks = evaluate_checks(ws)
        return ws, checks
    return _wrap(scn, go)
