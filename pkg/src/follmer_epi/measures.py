"""Centered probability measures on R^d and the metadata the stability bounds consume.

Three kinds are supported:

* ``gaussian``  -- N(0, cov), everything in closed form;
* ``mixture``   -- finite Gaussian mixtures, closed-form densities and sampling;
* ``potential`` -- a named potential family (``exp(-V)``) pushed through an
  affine map ``y = A x + c``; normalizer and moments by quadrature.

Measures are immutable once built. Constructors recenter, so every measure
returned by this module has mean zero to within 1e-9.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .errors import (
    MeasureError,
    PoincareUnavailable,
    SamplerDiagnosticFailure,
    SingularCovariance,
    UnnormalizedDensity,
)
from .linalg import max_eig, min_eig, require_spd, sym_inv_sqrt, symmetrize
from .quadrature import box_expectations

LOG_2PI = math.log(2.0 * math.pi)
CENTER_TOL = 1e-9
XI_TOL = 1e-6

MALA_TARGET_ACCEPT = 0.574
MALA_BURN_IN = 10_000
MALA_THIN = 5
MALA_MAX_CHAINS = 512


class QuarticPotential:
    """Separable potential ``V(x) = sum_i a_i x_i^2 / 2 + b_i x_i^4``.

    Uniformly log-concave with parameter ``min(a)`` whenever ``b >= 0``.
    """

    family = "quartic"
    separable = True

    def __init__(self, dim: int, a=1.0, b=1.0):
        self.dim = int(dim)
        self.a = np.broadcast_to(np.asarray(a, dtype=float), (self.dim,)).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=float), (self.dim,)).copy()
        if np.any(self.a <= 0) or np.any(self.b < 0):
            raise MeasureError("quartic potential needs a > 0 and b >= 0")
        self.xi = float(self.a.min())
        self.log_concave = True
        self._axis_cache = None

    @property
    def params(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist()}

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        x2 = x * x
        return -np.sum(x2 * (0.5 * self.a + self.b * x2), axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return -x * (self.a + 4.0 * self.b * x * x)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        diag = -(self.a + 12.0 * self.b * x * x)
        return diag[..., :, None] * np.eye(self.dim)

    def _axes(self):
        # per-axis 1D normalizers and variances; the product structure makes any dim tractable
        if self._axis_cache is None:
            log_z, var = [], []
            for ai, bi in zip(self.a, self.b):
                def lp(y, ai=ai, bi=bi):
                    return -(0.5 * ai * y[:, 0] ** 2 + bi * y[:, 0] ** 4)
                res = box_expectations(
                    lp, np.zeros(1), np.array([[1.0 / ai]]),
                    {"m2": lambda y, _: y[:, 0] ** 2}, rtol=1e-13,
                )
                log_z.append(res.log_mass)
                var.append(float(res.expectations["m2"]))
            self._axis_log_z = log_z
            self._axis_cache = (float(np.sum(log_z)), np.array(var))
        return self._axis_cache

    def log_normalizer(self) -> float:
        return self._axes()[0]

    def moments(self):
        return np.zeros(self.dim), np.diag(self._axes()[1])

    def axis_log_density(self, i: int, y):
        y2 = y * y
        return -y2 * (0.5 * self.a[i] + self.b[i] * y2)

    def axis_grad(self, i: int, y):
        return -y * (self.a[i] + 4.0 * self.b[i] * y * y)

    def axis_hess(self, i: int, y):
        return -(self.a[i] + 12.0 * self.b[i] * y * y)

    def axis_log_normalizer(self, i: int) -> float:
        self._axes()
        return self._axis_log_z[i]


class CallablePotential:
    """Potential given by user callables (in-process API only)."""

    family = "callable"
    separable = False

    def __init__(self, dim, log_density, grad, hess=None, name="callable",
                 xi=None, log_concave=False, log_normalizer=None):
        self.dim = int(dim)
        self._logp = log_density
        self._grad = grad
        self._hess = hess
        self.name = name
        self.xi = xi
        self.log_concave = bool(log_concave or (xi is not None and xi > 0))
        self._log_z = log_normalizer

    @property
    def params(self) -> dict:
        return {"name": self.name}

    def log_density(self, x):
        return self._logp(np.asarray(x, dtype=float))

    def grad(self, x):
        return self._grad(np.asarray(x, dtype=float))

    def hess(self, x):
        if self._hess is not None:
            return self._hess(np.asarray(x, dtype=float))
        return _fd_hessian(self._grad, np.asarray(x, dtype=float))

    def log_normalizer(self):
        return self._log_z

    def moments(self):
        return None


def _fd_hessian(grad, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h * (1.0 + np.abs(x[..., j:j + 1]).max()) if x.ndim == 1 else h
        cols.append((grad(x + e) - grad(x - e)) / (2 * e[j]))
    return symmetrize(np.stack(cols, axis=-1))


@dataclass(frozen=True, eq=False)
class Measure:
    """A centered probability law on R^d.

    Use the module-level constructors (:func:`gaussian`, :func:`mixture`,
    :func:`quartic`, ...) rather than instantiating directly.
    """

    dim: int
    kind: str
    covariance: np.ndarray
    mean: np.ndarray
    xi: float | None = None
    poincare: float | None = None
    name: str = ""
    weights: np.ndarray | None = None
    means: np.ndarray | None = None
    covs: np.ndarray | None = None
    base: object | None = None
    linear: np.ndarray | None = None
    shift: np.ndarray | None = None
    log_normalizer: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- metadata -------------------------------------------------------
    @property
    def sigma_min2(self) -> float:
        return float(min_eig(self.covariance))

    @property
    def sigma_max2(self) -> float:
        return float(max_eig(self.covariance))

    @property
    def log_concave(self) -> bool:
        if self.kind == "gaussian":
            return True
        if self.kind == "mixture":
            return self.weights.shape[0] == 1
        return bool(getattr(self.base, "log_concave", False))

    @property
    def is_standard_gaussian(self) -> bool:
        return self.kind == "gaussian" and np.allclose(self.covariance, np.eye(self.dim), atol=1e-12)

    def describe(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "name": self.name}
        if self.kind == "gaussian":
            out["cov"] = self.covariance.tolist()
        elif self.kind == "mixture":
            out["weights"] = self.weights.tolist()
            out["means"] = self.means.tolist()
            out["covs"] = self.covs.tolist()
        else:
            out["family"] = self.base.family
            out["params"] = self.base.params
            out["linear"] = self.linear.tolist()
            out["shift"] = self.shift.tolist()
        out["xi"] = self.xi
        out["poincare"] = self.poincare
        return out

    def fingerprint(self) -> str:
        if "fingerprint" not in self._cache:
            blob = json.dumps(self.describe(), sort_keys=True, default=repr)
            self._cache["fingerprint"] = hashlib.sha256(blob.encode()).hexdigest()[:16]
        return self._cache["fingerprint"]

    # -- densities ------------------------------------------------------
    def log_density(self, x) -> np.ndarray:
        """Normalized log-density at points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return _gauss_logpdf(x, self.covariance)
        if self.kind == "mixture":
            comps = np.stack([_gauss_logpdf(x - mu, c) for mu, c in zip(self.means, self.covs)], axis=-1)
            return logsumexp(comps + np.log(self.weights), axis=-1)
        if self.log_normalizer is None:
            raise UnnormalizedDensity("potential measure has no known normalizer")
        return self.unnormalized_log_density(x) - self.log_normalizer

    def unnormalized_log_density(self, x) -> np.ndarray:
        if self.kind != "potential":
            return self.log_density(x)
        y = self._to_base(np.asarray(x, dtype=float))
        return self.base.log_density(y) - self._cache["logdet"]

    def grad_log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return -x @ self._cache["prec"]
        if self.kind == "mixture":
            comps = np.stack([_gauss_logpdf(x - mu, c) for mu, c in zip(self.means, self.covs)], axis=-1)
            resp = np.exp(comps + np.log(self.weights) - logsumexp(comps + np.log(self.weights), axis=-1, keepdims=True))
            g = np.zeros_like(x)
            for k, (mu, p) in enumerate(zip(self.means, self._cache["precs"])):
                g = g - resp[..., k:k + 1] * ((x - mu) @ p)
            return g
        ainv = self._cache["ainv"]
        return self.base.grad(self._to_base(x)) @ ainv

    def hess_log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return np.broadcast_to(-self._cache["prec"], x.shape + (self.dim,))
        if self.kind == "mixture":
            return _fd_hessian(self.grad_log_density, x)
        ainv = self._cache["ainv"]
        return ainv.T @ self.base.hess(self._to_base(x)) @ ainv

    def axis_factors(self):
        """Per-coordinate ``(log_density, grad, hess)`` callables when the law is a product.

        Returns ``None`` for non-product laws. Each log-density is normalized.
        """
        if self.kind != "potential" or not getattr(self.base, "separable", False):
            return None
        lin = self.linear
        if np.count_nonzero(lin - np.diag(np.diag(lin))):
            return None
        out = []
        for i in range(self.dim):
            alpha, c = float(lin[i, i]), float(self.shift[i])
            const = math.log(abs(alpha)) + self.base.axis_log_normalizer(i)

            def logp(y, i=i, alpha=alpha, c=c, const=const):
                return self.base.axis_log_density(i, (y - c) / alpha) - const

            def grad(y, i=i, alpha=alpha, c=c):
                return self.base.axis_grad(i, (y - c) / alpha) / alpha

            def hess(y, i=i, alpha=alpha, c=c):
                return self.base.axis_hess(i, (y - c) / alpha) / (alpha * alpha)

            out.append((logp, grad, hess))
        return out

    def _to_base(self, x):
        return (x - self.shift) @ self._cache["ainv"].T


def _gauss_logpdf(x, cov):
    cov = np.atleast_2d(cov)
    d = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, np.moveaxis(np.asarray(x, dtype=float), -1, 0).reshape(d, -1))
    z = z.reshape((d,) + np.shape(x)[:-1])
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * np.sum(z * z, axis=0) - 0.5 * (d * LOG_2PI + logdet)


# ----------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------

def gaussian(cov, name: str = "", poincare: float | None = None) -> Measure:
    """Centered Gaussian N(0, cov). Any supplied mean is dropped (recentered)."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = require_spd(cov, "covariance")
    d = cov.shape[0]
    m = Measure(dim=d, kind="gaussian", covariance=cov, mean=np.zeros(d),
                xi=1.0 / max_eig(cov), poincare=poincare, name=name or "gaussian")
    m._cache["prec"] = np.linalg.inv(cov)
    return m


def standard_gaussian(dim: int = 1) -> Measure:
    return gaussian(np.eye(dim), name="standard-gaussian")


def mixture(weights, means, covs, name: str = "", poincare: float | None = None) -> Measure:
    """Gaussian mixture, recentered so that its mean is exactly zero."""
    weights = np.asarray(weights, dtype=float)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if means.shape[0] != weights.shape[0] and means.shape[1] == weights.shape[0]:
        means = means.T
    k, d = means.shape
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 1:
        covs = covs[:, None, None] * np.eye(d)
    elif covs.ndim == 2:
        covs = np.broadcast_to(covs, (k, d, d)).copy()
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise MeasureError("mixture weights must be a probability vector (sum 1 within 1e-12)")
    for c in covs:
        require_spd(c, "component covariance")
    means = means - weights @ means
    cov = np.einsum("k,kij->ij", weights, covs) + np.einsum("k,ki,kj->ij", weights, means, means)
    m = Measure(dim=d, kind="mixture", covariance=symmetrize(cov), mean=np.zeros(d),
                poincare=poincare, name=name or "mixture", weights=weights, means=means, covs=covs)
    m._cache["precs"] = np.linalg.inv(covs)
    return m


def quartic(dim: int = 1, a=1.0, b=1.0, name: str = "", poincare: float | None = None) -> Measure:
    """Density proportional to ``exp(-sum_i (a_i x_i^2/2 + b_i x_i^4))``; xi = min(a)."""
    return from_potential(QuarticPotential(dim, a, b), name=name or "quartic", poincare=poincare)


def from_potential(base, name: str = "", poincare: float | None = None,
                   linear=None, shift=None, xi: float | None = None,
                   covariance=None) -> Measure:
    """Build a potential-kind measure ``A X_base + c`` and recenter it."""
    d = base.dim
    linear = np.eye(d) if linear is None else np.atleast_2d(np.asarray(linear, dtype=float))
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    ainv = np.linalg.inv(linear)
    logdet = float(np.linalg.slogdet(linear)[1])
    base_xi = base.xi if xi is None else xi
    if base_xi is not None and xi is None:
        # -hess(log p') = A^{-T} H A^{-1} >= xi * lambda_min(A^{-T} A^{-1})
        base_xi = float(base_xi * min_eig(ainv.T @ ainv))
    m = Measure(dim=d, kind="potential", covariance=np.eye(d), mean=np.zeros(d),
                xi=base_xi, poincare=poincare, name=name, base=base,
                linear=linear, shift=shift)
    m._cache.update(ainv=ainv, logdet=logdet)
    base_log_z = base.log_normalizer()
    mom = base.moments()
    if base_log_z is not None and mom is not None:
        mean = linear @ mom[0] + shift
        cov = linear @ mom[1] @ linear.T
        log_z = base_log_z
    elif d <= 2:
        center = shift
        scale = linear @ linear.T if covariance is None else np.asarray(covariance, dtype=float)
        pre = box_expectations(m.unnormalized_log_density, center, scale,
                               {"mean": lambda y, _: y}, rtol=1e-8)
        center = np.asarray(pre.expectations["mean"])
        res = box_expectations(
            m.unnormalized_log_density, center, scale,
            {"mean": lambda y, _: y, "m2": lambda y, _: y[:, :, None] * y[:, None, :]},
            rtol=1e-12,
        )
        mean = np.asarray(res.expectations["mean"])
        cov = np.asarray(res.expectations["m2"]) - np.outer(mean, mean)
        log_z = res.log_mass
    else:
        if covariance is None or base_log_z is None:
            raise UnnormalizedDensity("dim > 2 potentials need a supplied normalizer and covariance")
        mean, cov, log_z = np.zeros(d), np.asarray(covariance, dtype=float), base_log_z
    if np.linalg.norm(mean) > CENTER_TOL:
        shift = shift - mean
        m = Measure(dim=d, kind="potential", covariance=np.eye(d), mean=np.zeros(d),
                    xi=base_xi, poincare=poincare, name=name, base=base, linear=linear, shift=shift)
        m._cache.update(ainv=ainv, logdet=logdet)
    object.__setattr__(m, "covariance", symmetrize(np.atleast_2d(cov)))
    object.__setattr__(m, "log_normalizer", float(log_z))
    require_spd(m.covariance, "covariance")
    if m.xi is not None and m.xi > 0:
        _spot_check_xi(m)
    return m


def _spot_check_xi(m: Measure, n_points: int = 100) -> None:
    rng = np.random.default_rng(int(m.fingerprint(), 16) % (2 ** 32))
    pts = rng.standard_normal((n_points, m.dim)) @ np.linalg.cholesky(9.0 * m.covariance).T
    h = 1e-4
    for p in pts:
        cols = []
        for j in range(m.dim):
            e = np.zeros(m.dim)
            e[j] = h
            cols.append((m.grad_log_density(p + e) - m.grad_log_density(p - e)) / (2 * h))
        hess = symmetrize(np.stack(cols, axis=-1))
        if min_eig(-hess) < m.xi - XI_TOL * max(1.0, abs(m.xi)):
            raise MeasureError(f"declared xi={m.xi} violated: -hess min eigenvalue {min_eig(-hess)} at {p}")


def transform(m: Measure, linear) -> Measure:
    """Push ``m`` forward through the linear map ``x -> A x``."""
    a = np.atleast_2d(np.asarray(linear, dtype=float))
    s_max2 = float(max_eig(a @ a.T))
    poincare = None if m.poincare is None else m.poincare * s_max2
    if m.kind == "gaussian":
        return gaussian(a @ m.covariance @ a.T, name=m.name, poincare=poincare)
    if m.kind == "mixture":
        return mixture(m.weights, m.means @ a.T, a @ m.covs @ a.T, name=m.name, poincare=poincare)
    xi = None if m.xi is None else m.xi / s_max2
    lin = a @ m.linear
    out = from_potential(m.base, name=m.name, poincare=poincare, linear=lin, shift=a @ m.shift)
    if xi is not None and (out.xi is None or out.xi < xi):
        object.__setattr__(out, "xi", xi)
    return out


def scaled(m: Measure, factor: float) -> Measure:
    return transform(m, factor * np.eye(m.dim))


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------

def relative_log_density(m: Measure, x) -> np.ndarray:
    """``ln f_X(x)``: log-density of ``m`` with respect to the standard Gaussian."""
    x = np.asarray(x, dtype=float)
    return m.log_density(x) + 0.5 * np.sum(x * x, axis=-1) + 0.5 * m.dim * LOG_2PI


def sample(m: Measure, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` samples, shape (n, d). Deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if m.kind == "gaussian":
        return rng.standard_normal((n, m.dim)) @ np.linalg.cholesky(m.covariance).T
    if m.kind == "mixture":
        comp = rng.choice(m.weights.shape[0], size=n, p=m.weights)
        z = rng.standard_normal((n, m.dim))
        chols = np.linalg.cholesky(m.covs)
        return m.means[comp] + np.einsum("nij,nj->ni", chols[comp], z)
    if m.dim == 1:
        return _inverse_cdf_sample(m, rng, n)
    return mala_sample(m, n, rng)


def _inverse_cdf_sample(m: Measure, rng, n):
    if "icdf" not in m._cache:
        sd = math.sqrt(m.covariance[0, 0])
        grid = np.linspace(-16 * sd, 16 * sd, (1 << 16) + 1)
        pdf = np.exp(m.log_density(grid[:, None]))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        m._cache["icdf"] = (cdf[keep], grid[keep])
    cdf, grid = m._cache["icdf"]
    return np.interp(rng.random(n), cdf, grid)[:, None]


@dataclass
class MalaDiagnostics:
    acceptance: float
    step: float
    ess_per_draw: float


def mala_sample(m: Measure, n: int, rng, burn_in: int = MALA_BURN_IN,
                thin: int = MALA_THIN, return_diagnostics: bool = False):
    """Preconditioned MALA with many short parallel chains.

    The step size is adapted during the first half of burn-in towards an
    acceptance rate of 0.574, then frozen.
    """
    d = m.dim
    chains = min(n, MALA_MAX_CHAINS)
    per_chain = -(-n // chains)
    precond = m.covariance
    chol = np.linalg.cholesky(precond)
    x = rng.standard_normal((chains, d)) @ chol.T
    logp = m.unnormalized_log_density(x)
    grad = m.grad_log_density(x)
    log_step = math.log(1.0 / d ** (1.0 / 6.0))

    def step(x, logp, grad, h):
        drift = 0.5 * h * h * grad @ precond
        prop = x + drift + h * rng.standard_normal(x.shape) @ chol.T
        lp_prop = m.unnormalized_log_density(prop)
        g_prop = m.grad_log_density(prop)
        back = x - prop - 0.5 * h * h * g_prop @ precond
        fwd = prop - x - drift
        prec_inv = np.linalg.inv(precond)
        log_q_back = -0.5 * np.einsum("ni,ij,nj->n", back, prec_inv, back) / (h * h)
        log_q_fwd = -0.5 * np.einsum("ni,ij,nj->n", fwd, prec_inv, fwd) / (h * h)
        log_alpha = lp_prop - logp + log_q_back - log_q_fwd
        accept = np.log(rng.random(x.shape[0])) < log_alpha
        x = np.where(accept[:, None], prop, x)
        logp = np.where(accept, lp_prop, logp)
        grad = np.where(accept[:, None], g_prop, grad)
        return x, logp, grad, accept.mean()

    for it in range(burn_in):
        x, logp, grad, acc = step(x, logp, grad, math.exp(log_step))
        if it < burn_in // 2:
            log_step += (acc - MALA_TARGET_ACCEPT) / math.sqrt(it + 1.0)
    h = math.exp(log_step)
    draws = np.empty((per_chain, chains, d))
    accepted = 0.0
    for k in range(per_chain):
        for _ in range(thin):
            x, logp, grad, acc = step(x, logp, grad, h)
            accepted += acc
        draws[k] = x
    acceptance = accepted / (per_chain * thin)
    ess = _ess_per_draw(draws)
    diag = MalaDiagnostics(acceptance, h, ess)
    if not (0.3 <= acceptance <= 0.8):
        raise SamplerDiagnosticFailure(f"MALA acceptance {acceptance:.3f} outside [0.3, 0.8]")
    if ess < 0.1:
        raise SamplerDiagnosticFailure(f"MALA effective sample size per draw {ess:.3f} < 0.1")
    out = np.swapaxes(draws, 0, 1).reshape(-1, d)[:n]
    return (out, diag) if return_diagnostics else out


def _ess_per_draw(draws: np.ndarray) -> float:
    """Initial-positive-sequence ESS per draw, worst coordinate, pooled over chains."""
    k = draws.shape[0]
    if k < 4:
        return 1.0
    worst = 1.0
    for j in range(draws.shape[2]):
        s = draws[:, :, j] - draws[:, :, j].mean()
        var = np.mean(s * s)
        if var == 0:
            continue
        tau = 1.0
        for lag in range(1, k // 2):
            rho = np.mean(s[lag:] * s[:-lag]) / var
            if rho <= 0:
                break
            tau += 2.0 * rho
        worst = min(worst, 1.0 / tau)
    return worst


@dataclass(frozen=True)
class PoincareBound:
    value: float
    flag: str  # "exact" | "upper_bound" | "numerical"
    route: str


def poincare_bound(m: Measure) -> PoincareBound:
    """An upper bound (or estimate) on the Poincare constant C_p(X)."""
    if m.poincare is not None:
        return PoincareBound(float(m.poincare), "upper_bound", "user")
    if m.kind == "gaussian":
        return PoincareBound(m.sigma_max2, "exact", "gaussian")
    if m.xi is not None and m.xi > 0:
        return PoincareBound(1.0 / m.xi, "upper_bound", "uniform-log-concavity")
    if m.dim == 1:
        return PoincareBound(spectral_gap_1d(m) ** -1, "numerical", "rayleigh-1d")
    raise PoincareUnavailable(f"no Poincare route for {m.kind} measure in dim {m.dim}")


def spectral_gap_1d(m: Measure, n: int = 4001, half_width: float = 12.0) -> float:
    """Smallest nonzero eigenvalue of ``-L = -(d^2 + (ln p)' d)`` on a finite-element grid."""
    sd = math.sqrt(m.covariance[0, 0])
    x = np.linspace(-half_width * sd, half_width * sd, n)
    h = x[1] - x[0]
    logp = m.log_density(x[:, None])
    mid = m.log_density(0.5 * (x[1:] + x[:-1])[:, None])
    top = logp.max()
    p = np.exp(logp - top)
    pm = np.exp(mid - top)
    mass = p * h
    stiff_off = -pm / h
    stiff_diag = np.zeros(n)
    stiff_diag[:-1] += pm / h
    stiff_diag[1:] += pm / h
    s = 1.0 / np.sqrt(mass)
    diag = stiff_diag * s * s
    off = stiff_off * s[:-1] * s[1:]
    vals = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 1))
    return float(vals[1])


def joint_whiten(mx: Measure, my: Measure):
    """Apply ``A = (Cov(X)/2 + Cov(Y)/2)^{-1/2}`` to both measures.

    Afterwards ``Cov(AX) + Cov(AY) = 2 I``. Returns ``(AX, AY, A)``.
    """
    if mx.dim != my.dim:
        raise ValueError("measures must share a dimension")
    avg = 0.5 * (mx.covariance + my.covariance)
    if min_eig(avg) < 1e-12:
        raise SingularCovariance("averaged covariance is singular")
    a = sym_inv_sqrt(avg)
    return transform(mx, a), transform(my, a), a
