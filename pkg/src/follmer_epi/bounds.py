"""Right-hand sides of the deficit lower bounds, the matrix lemma, and Gaussian surrogates.

Each bound returns a :class:`BoundResult`. Failed hypotheses give
``applicable=False`` with the reason, or raise :class:`HypothesisViolated`
when ``strict=True``.

Ensemble-based right-hand sides integrate over ``[0, 1 - epsilon]`` only.
Their integrands are nonnegative, so the truncated value is itself a valid
lower bound for the deficit; ``tail`` records an estimate of the omitted part.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyEstimate, relative_entropy_direct
from .errors import DegenerateCovariance, GridMismatch, HypothesisViolated, PoincareUnavailable
from .linalg import gaussian_kl, require_spd, sym_inv, sym_sqrt, symmetrize
from .measures import Measure, poincare_bound, scaled
from .simulate import MomentCurve, PathEnsemble, batch_means, check_same_grid

HYP_TOL = 1e-6
GAMMA_TOL = 1e-8
DEGENERATE_VAR = 1e-10
BOUND_NAMES = ("lemma-jump", "jump-ct", "thm1", "cor2", "thm3", "thm4", "thm5", "wasserstein-thm")


@dataclass
class BoundResult:
    name: str
    rhs: float
    applicable: bool
    reason: str = ""
    inputs: dict = field(default_factory=dict)
    stderr: float = 0.0
    tail: float = 0.0
    uncertainty: float = 0.0
    margin: float | None = None
    passed: bool | None = None
    display_only: bool = False
    tolerance: float | None = None
    ratio: float | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "rhs": self.rhs, "applicable": self.applicable,
                "reason": self.reason, "inputs": self.inputs, "stderr": self.stderr,
                "tail": self.tail, "uncertainty": self.uncertainty, "margin": self.margin,
                "passed": self.passed, "display_only": self.display_only,
                "tolerance": self.tolerance, "deficit_over_rhs": self.ratio}


def _inapplicable(name: str, reason: str, strict: bool, inputs=None) -> BoundResult:
    if strict:
        raise HypothesisViolated(f"{name}: {reason}")
    return BoundResult(name, 0.0, False, reason, inputs or {})


# ----------------------------------------------------------------------
# matrix lemma
# ----------------------------------------------------------------------

def matrix_gap(a, b, lam: float) -> tuple[float, float]:
    """Both sides of the trace identity for the concavity gap of the matrix square root.

    ``lhs = Tr(sqrt(lam A^2 + (1-lam) B^2) - (lam A + (1-lam) B))`` and
    ``rhs = lam (1-lam) Tr((A-B)^2 (sqrt(...) + lam A + (1-lam) B)^{-1})``.
    """
    a = require_spd(np.atleast_2d(np.asarray(a, dtype=float)), "A")
    b = require_spd(np.atleast_2d(np.asarray(b, dtype=float)), "B")
    s = sym_sqrt(lam * a @ a + (1.0 - lam) * b @ b)
    mid = lam * a + (1.0 - lam) * b
    lhs = float(np.trace(s - mid))
    diff = a - b
    rhs = float(lam * (1.0 - lam) * np.trace(diff @ diff @ sym_inv(s + mid)))
    return lhs, rhs


def sandwich_trace(ga: np.ndarray, gb: np.ndarray, lam: float) -> np.ndarray:
    """Batched ``Tr((A-B)^2 (sqrt(lam A^2+(1-lam)B^2) + lam A + (1-lam) B)^{-1})``.

    Arrays have shape (..., d, d). Eigenvalues of the sandwich below
    ``1e-12 * lambda_max`` are dropped (pseudo-inverse).
    """
    d = ga.shape[-1]
    if d == 1:
        a, b = ga[..., 0, 0], gb[..., 0, 0]
        den = np.sqrt(lam * a * a + (1.0 - lam) * b * b) + lam * a + (1.0 - lam) * b
        num = (a - b) ** 2
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    s = sym_sqrt(lam * ga @ ga + (1.0 - lam) * gb @ gb)
    inv = sym_inv(s + lam * ga + (1.0 - lam) * gb)
    diff = ga - gb
    return np.einsum("...ij,...ji->...", diff @ diff, inv)


# ----------------------------------------------------------------------
# ensemble bounds
# ----------------------------------------------------------------------

def _per_path(e_x: PathEnsemble, e_y: PathEnsemble, fn) -> np.ndarray:
    """Sum over nodes of ``fn(k, Gamma_x[k], Gamma_y[k])``, shape (n,)."""
    out = np.zeros(e_x.n_paths)
    for k in range(e_x.grid.size):
        out += fn(k, e_x.gamma[k], e_y.gamma[k])
    return out


def jump_bound(e_x: PathEnsemble, e_y: PathEnsemble, lam: float) -> BoundResult:
    """Monte Carlo estimate of the main jump bound, with paths paired by index."""
    check_same_grid(e_x, e_y)
    w = e_x.grid.weights_over()
    c = lam * (1.0 - lam)
    per = _per_path(e_x, e_y, lambda k, gx, gy: c * w[k] * sandwich_trace(gx, gy, lam))
    value, se = batch_means(per)
    last = c * float(np.mean(sandwich_trace(e_x.gamma[-1], e_y.gamma[-1], lam)))
    return BoundResult("lemma-jump", float(value), True, inputs={"lambda": lam},
                       stderr=float(se), tail=last)


def _ct_inverse(rule: str, t: np.ndarray, xi: float | None) -> np.ndarray:
    if rule == "log-concave":
        return t.copy()
    if rule == "uniform":
        return (1.0 - t) * xi + t
    raise ValueError(f"unknown c_t rule {rule!r}")


def jump_bound_ct(e_x: PathEnsemble, e_y: PathEnsemble, lam: float, rule: str,
                  mx: Measure | None = None, my: Measure | None = None,
                  strict: bool = False) -> BoundResult:
    """The simplified bound ``(lam(1-lam)/2) int Tr E[(Gx - Gy)^2] / ((1-t) c_t) dt``.

    ``rule`` is ``"log-concave"`` (``c_t = 1/t``) or ``"uniform"``
    (``c_t = 1/((1-t) xi + t)``, xi the smaller declared parameter).
    Every stored Gamma sample is checked against ``c_t I``.
    """
    check_same_grid(e_x, e_y)
    name = "jump-ct"
    xi = None
    if mx is not None and my is not None:
        if rule == "log-concave" and not (mx.log_concave and my.log_concave):
            return _inapplicable(name, "both measures must be log-concave", strict)
        if rule == "uniform":
            if mx.xi is None or my.xi is None or min(mx.xi, my.xi) <= 0:
                return _inapplicable(name, "both measures must declare xi > 0", strict)
            xi = min(mx.xi, my.xi)
    elif rule == "uniform":
        raise ValueError("the uniform rule needs the measures for xi")
    t = e_x.grid.nodes
    ct_inv = _ct_inverse(rule, t, xi)
    for e in (e_x, e_y):
        top = np.array([np.max(np.linalg.eigvalsh(e.gamma[k][:1] if e.gamma.strides[1] == 0 else e.gamma[k]))
                        for k in range(t.size)])
        excess = top * ct_inv - 1.0
        if np.any(excess > GAMMA_TOL):
            k = int(np.argmax(excess))
            raise HypothesisViolated(
                f"{name}: a Gamma sample exceeds c_t I at t={t[k]:.6g} (relative excess {excess[k]:.3g})")
    w = e_x.grid.weights_over()
    c = 0.5 * lam * (1.0 - lam)

    def term(k, gx, gy):
        diff = gx - gy
        return c * w[k] * ct_inv[k] * np.einsum("...ij,...ji->...", diff, diff)

    per = _per_path(e_x, e_y, term)
    value, se = batch_means(per)
    return BoundResult(name, float(value), True, inputs={"lambda": lam, "rule": rule, "xi": xi},
                       stderr=float(se))


def surrogate_covariance(curve: MomentCurve) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^1 E[Gamma_t]^2 dt`` and an elementwise standard error.

    The last interval ``[1 - eps, 1]`` is closed with the value at ``1 - eps``.
    """
    w = curve.grid.weights()
    eg = curve.e_gamma
    sq = eg @ eg
    cov = np.einsum("k,kij->ij", w, sq) + curve.grid.epsilon * sq[-1]
    se_sq = 2.0 * np.abs(eg) @ curve.se_gamma
    se = np.einsum("k,kij->ij", w, se_sq) + curve.grid.epsilon * se_sq[-1]
    return symmetrize(cov), se


def gaussian_surrogates(curve_x: MomentCurve, curve_y: MomentCurve) -> tuple[np.ndarray, np.ndarray]:
    """Covariances of the Gaussian vectors driven by ``E[Gamma_t]``."""
    if not curve_x.grid.same_as(curve_y.grid):
        raise GridMismatch("curves live on different grids")
    return surrogate_covariance(curve_x)[0], surrogate_covariance(curve_y)[0]


def _uniform_gaussian_terms(mx, my, curve_x, curve_y, lam, sx4, sy4, scale):
    cov_gx, se_x = surrogate_covariance(curve_x)
    cov_gy, se_y = surrogate_covariance(curve_y)

    def rhs_for(cgx, cgy):
        dx = relative_entropy_direct(mx, cgx)
        dy = relative_entropy_direct(my, cgy)
        kxy = gaussian_kl(cgx, cgy)
        kyx = gaussian_kl(cgy, cgx)
        val = 0.5 * lam * (1.0 - lam) * scale * (sx4 * dx.value + sy4 * dy.value + 0.5 * sx4 * kxy + 0.5 * sy4 * kyx)
        return val, dx, dy, kxy, kyx

    value, dx, dy, kxy, kyx = rhs_for(cov_gx, cov_gy)
    spread = 0.0
    for sign in (-2.0, 2.0):
        try:
            alt = rhs_for(cov_gx + sign * se_x, cov_gy + sign * se_y)[0]
            spread = max(spread, abs(alt - value))
        except Exception:
            pass
    inputs = {"lambda": lam, "D_X_GX": dx.value, "D_Y_GY": dy.value, "D_GX_GY": kxy, "D_GY_GX": kyx,
              "cov_GX": cov_gx.tolist(), "cov_GY": cov_gy.tolist()}
    return value, spread, dx.residual + dy.residual, inputs


def _require_uniform(m: Measure, level: float) -> bool:
    return m.xi is not None and m.xi >= level - 1e-12


def thm1_rhs(mx: Measure, my: Measure, curve_x: MomentCurve, curve_y: MomentCurve,
             lam: float, strict: bool = False) -> BoundResult:
    """Bound for 1-uniformly log-concave pairs, with weights ``sigma^4`` on each term."""
    name = "thm1"
    sx2, sy2 = mx.sigma_min2, my.sigma_min2
    if min(sx2, sy2) < DEGENERATE_VAR:
        raise DegenerateCovariance(f"{name}: minimal covariance eigenvalue below {DEGENERATE_VAR:g}")
    if not (_require_uniform(mx, 1.0) and _require_uniform(my, 1.0)):
        return _inapplicable(name, "both measures must be 1-uniformly log-concave (xi >= 1)", strict)
    value, spread, resid, inputs = _uniform_gaussian_terms(
        mx, my, curve_x, curve_y, lam, sx2 ** 2, sy2 ** 2, 1.0)
    inputs.update(sigma_x2=sx2, sigma_y2=sy2)
    return BoundResult(name, value, True, inputs=inputs, uncertainty=spread + resid)


def cor2_measures(mx: Measure, my: Measure, xi: float) -> tuple[Measure, Measure]:
    """The pair rescaled by ``sqrt(xi)``; both are then 1-uniformly log-concave."""
    r = math.sqrt(xi)
    return scaled(mx, r), scaled(my, r)


def cor2_rhs(mx: Measure, my: Measure, curve_xs: MomentCurve, curve_ys: MomentCurve,
             lam: float, xi: float, strict: bool = False) -> BoundResult:
    """Bound for xi-uniformly log-concave isotropic pairs.

    ``curve_xs`` and ``curve_ys`` must come from ensembles of the rescaled
    measures returned by :func:`cor2_measures`. The deficit and relative
    entropies between a vector and a Gaussian are unchanged by the common
    rescaling, so the surrogates of the rescaled pair serve the original pair.
    """
    name = "cor2"
    d = mx.dim
    for m in (mx, my):
        if np.max(np.abs(m.covariance - np.eye(d))) > HYP_TOL:
            return _inapplicable(name, "both measures must be isotropic (Cov = I within 1e-6)", strict)
    if not (_require_uniform(mx, xi) and _require_uniform(my, xi)):
        return _inapplicable(name, f"both measures must be {xi}-uniformly log-concave", strict)
    sx, sy = cor2_measures(mx, my, xi)
    value, spread, resid, inputs = _uniform_gaussian_terms(sx, sy, curve_xs, curve_ys, lam, 1.0, 1.0, xi * xi)
    inputs.update(xi=xi)
    return BoundResult(name, value, True, inputs=inputs, uncertainty=spread + resid)


def _poincare_or_reason(m: Measure):
    try:
        return poincare_bound(m), None
    except PoincareUnavailable as exc:
        return None, str(exc)


def thm3_rhs(mx: Measure, my: Measure, lam: float, d_x: EntropyEstimate, d_y: EntropyEstimate,
             strict: bool = False) -> BoundResult:
    """Bound for whitened log-concave pairs with the explicit proof constant ``xi^3 / 2``."""
    name = "thm3"
    d = mx.dim
    if not (mx.log_concave and my.log_concave):
        return _inapplicable(name, "both measures must be log-concave", strict)
    gap = np.max(np.abs(mx.covariance + my.covariance - 2.0 * np.eye(d)))
    if gap > HYP_TOL:
        return _inapplicable(name, f"Cov(X) + Cov(Y) differs from 2I by {gap:.3g}; whiten first", strict)
    sx2, sy2 = mx.sigma_min2, my.sigma_min2
    if min(sx2, sy2) < DEGENERATE_VAR:
        raise DegenerateCovariance(f"{name}: minimal covariance eigenvalue below {DEGENERATE_VAR:g}")
    px, rx = _poincare_or_reason(mx)
    py, ry = _poincare_or_reason(my)
    if px is None or py is None:
        if strict:
            raise PoincareUnavailable(rx or ry)
        return BoundResult(name, 0.0, False, rx or ry)
    cp = max(px.value / sx2, py.value / sy2, 1.0)
    xi = min(sx2, sy2) / (3.0 * (2.0 * cp + 1.0))
    rhs = 0.5 * xi ** 3 * lam * (1.0 - lam) * (d_x.value + d_y.value)
    return BoundResult(name, rhs, True, inputs={
        "lambda": lam, "sigma_x2": sx2, "sigma_y2": sy2, "cp_x": px.value, "cp_y": py.value,
        "cp_flag_x": px.flag, "cp_flag_y": py.flag, "cp": cp, "xi": xi,
        "D_X": d_x.value, "D_Y": d_y.value, "formula": "xi^3/2 * lam(1-lam) * (D_X + D_Y)"},
        uncertainty=0.5 * xi ** 3 * lam * (1.0 - lam) * (d_x.budget + d_y.budget))


def thm4_rhs(mx: Measure, my: Measure, lam: float, d_x: EntropyEstimate, d_y: EntropyEstimate,
             cp: float | None = None, strict: bool = False) -> BoundResult:
    """Bound for isotropic log-concave pairs of relative entropy at most 1/4."""
    name = "thm4"
    d = mx.dim
    if not (mx.log_concave and my.log_concave):
        return _inapplicable(name, "both measures must be log-concave", strict)
    for label, m in (("X", mx), ("Y", my)):
        if np.max(np.abs(m.covariance - np.eye(d))) > HYP_TOL:
            return _inapplicable(name, f"{label} is not isotropic (Cov = I within 1e-6)", strict)
    for label, de in (("X", d_x), ("Y", d_y)):
        if de.value > 0.25:
            return _inapplicable(name, f"D({label}||G) = {de.value:.4g} exceeds 1/4", strict,
                                 {"D_X": d_x.value, "D_Y": d_y.value})
    px, rx = _poincare_or_reason(mx)
    py, ry = _poincare_or_reason(my)
    if cp is None:
        if px is None or py is None:
            return _inapplicable(name, rx or ry, strict)
        cp = max(px.value, py.value)
    else:
        for label, p in (("X", px), ("Y", py)):
            if p is not None and p.value > cp * (1 + 1e-12):
                return _inapplicable(name, f"C_p({label}) bound {p.value:.4g} exceeds cp={cp:.4g}", strict)
    rhs = lam * (1.0 - lam) / (36.0 * cp) * (d_x.value + d_y.value)
    return BoundResult(name, rhs, True, inputs={"lambda": lam, "cp": cp, "D_X": d_x.value, "D_Y": d_y.value},
                       uncertainty=lam * (1.0 - lam) / (36.0 * cp) * (d_x.budget + d_y.budget))


def _f(x: np.ndarray) -> np.ndarray:
    """``x - ln(1 + x)`` with a series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs * (1.0 / 3.0 - xs * (0.25 - xs * (0.2 - xs / 6.0))))
    return np.where(small, series, x - np.log1p(np.where(small, 0.0, x)))


def thm5_coefficient(lam, cp):
    """``lam - f(lam (cp-1)) / f(cp-1)`` with ``f(x) = x - ln(1+x)``.

    At ``cp = 1`` the ratio tends to ``lam^2``, so the coefficient tends to
    ``lam (1 - lam)``; the series branch makes the function continuous there.
    """
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(cp, dtype=float) - 1.0
    near = np.abs(x) < 1e-6
    xs = np.where(near, 1.0, x)
    ratio = np.where(near, lam * lam * (1.0 + 2.0 * x * (1.0 - lam) / 3.0), _f(lam * xs) / _f(xs))
    out = lam - ratio
    return float(out) if out.ndim == 0 else out


def thm5_rhs(mx: Measure, lam: float, d_x: EntropyEstimate, cp: float | None = None,
             my: Measure | None = None, strict: bool = False) -> BoundResult:
    """Bound for the pair (X, standard Gaussian); X need not be log-concave."""
    name = "thm5"
    if my is not None and not my.is_standard_gaussian:
        return _inapplicable(name, "the second measure must be the standard Gaussian", strict)
    flag = "user"
    if cp is None:
        p, reason = _poincare_or_reason(mx)
        if p is None:
            return _inapplicable(name, reason, strict)
        cp, flag = p.value, p.flag
    if cp <= 0:
        return _inapplicable(name, "cp must be positive", strict)
    coef = thm5_coefficient(lam, cp)
    return BoundResult(name, coef * d_x.value, True,
                       inputs={"lambda": lam, "cp": cp, "cp_flag": flag, "coefficient": coef, "D_X": d_x.value},
                       uncertainty=abs(coef) * d_x.budget)


def wasserstein_thm_rhs(mx: Measure, my: Measure, curve_x: MomentCurve, curve_y: MomentCurve,
                        lam: float, strict: bool = False) -> BoundResult:
    """Sum of the three coupling costs, each an upper bound on a squared W2 distance."""
    name = "wasserstein-thm"
    if not (_require_uniform(mx, 1.0) and _require_uniform(my, 1.0)):
        return _inapplicable(name, "both measures must be 1-uniformly log-concave (xi >= 1)", strict)
    if not curve_x.grid.same_as(curve_y.grid):
        raise GridMismatch("curves live on different grids")
    w = curve_x.grid.weights()
    var_x = np.trace(curve_x.var_gamma, axis1=1, axis2=2)
    var_y = np.trace(curve_y.var_gamma, axis1=1, axis2=2)
    diff = curve_x.e_gamma - curve_y.e_gamma
    cross = np.einsum("kij,kji->k", diff, diff)
    c = 0.5 * lam * (1.0 - lam)
    wx, wy, wc = float(w @ var_x), float(w @ var_y), float(w @ cross)
    se = c * float(w @ (curve_x.se_tr_var_gamma + curve_y.se_tr_var_gamma))
    d = mx.dim
    return BoundResult(name, c * (wx + wy + wc), True,
                       inputs={"lambda": lam, "W2sq_X_GX": wx, "W2sq_Y_GY": wy, "W2sq_GX_GY": wc},
                       stderr=se, tail=c * 3 * d * curve_x.grid.epsilon)


def ball_nguyen_display(mx: Measure, d_x: EntropyEstimate) -> BoundResult:
    """Prior-work entropy jump ``D / (8 C_p)`` for ``X = Y``, ``lam = 1/2``; display only."""
    p, reason = _poincare_or_reason(mx)
    if p is None:
        return BoundResult("ball-nguyen", 0.0, False, reason, display_only=True)
    return BoundResult("ball-nguyen", d_x.value / (8.0 * p.value), True,
                       inputs={"cp": p.value}, display_only=True)
