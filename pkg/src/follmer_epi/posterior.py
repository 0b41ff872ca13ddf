"""Conditional law of the endpoint given the current state of the Föllmer process.

Given ``X_t = x`` the endpoint ``X_1`` has density proportional to

    p(y) * exp(<x, y>/(1-t) - t |y|^2 / (2(1-t)))

which for ``t > 0`` is the Bayes posterior under ``X_t = t X_1 + sqrt(t(1-t)) G``
and reduces to ``p`` at ``t = 0, x = 0``. Everything downstream (the matrix
process Gamma, the drift) is a moment of this tilted density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import QuadratureNoConvergence, TimeOutOfRange
from .linalg import sym_apply, symmetrize
from .measures import Measure

LOCAL_HALF_WIDTH = 10.0
MAX_DOUBLINGS = 4
MAX_RESETS = 6
MOMENT_RTOL = 1e-8
NEWTON_MAX_ITER = 50
_START = {1: 33, 2: 21}
_CHUNK_ELEMS = 1 << 21


@dataclass
class PosteriorStats:
    """Moments of the posterior at a single ``(t, x)``."""

    t: float
    x: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    gamma: np.ndarray
    drift: np.ndarray
    log_mass: float


@dataclass
class PosteriorBatch:
    """Posterior moments for a batch of states, arrays with leading axis n."""

    t: float
    x: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    log_mass: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return self.cov / (1.0 - self.t)

    @property
    def drift(self) -> np.ndarray:
        return (self.mean - self.x) / (1.0 - self.t)


def _check_time(t: float) -> float:
    t = float(t)
    if not (0.0 <= t < 1.0):
        raise TimeOutOfRange(f"t must lie in [0, 1), got {t}")
    return t


def posterior_moments(m: Measure, t: float, x) -> PosteriorStats:
    """Mean, covariance, Gamma and drift of the posterior at a single state."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = posterior_batch(m, t, x[None, :])
    return PosteriorStats(
        t=b.t, x=x, mean=b.mean[0], cov=np.array(b.cov[0]),
        gamma=np.array(b.gamma[0]), drift=b.drift[0], log_mass=float(b.log_mass[0]),
    )


def posterior_batch(m: Measure, t: float, x) -> PosteriorBatch:
    """Vectorized posterior moments for states ``x`` of shape (n, d)."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if m.dim == 1 else x[None, :]
    if m.kind == "gaussian":
        return _gaussian_posterior(m.covariance, t, x)
    if m.kind == "mixture":
        return _mixture_posterior(m, t, x)
    factors = m.axis_factors()
    if factors is not None:
        return _separable_posterior(factors, t, x)
    if m.dim > 2:
        raise QuadratureNoConvergence("non-product potential posteriors need dim <= 2")
    return _quadrature_posterior(m.log_density, m.grad_log_density, m.hess_log_density, t, x)


def _gaussian_posterior(cov, t, x):
    d = cov.shape[0]
    s = t / (1.0 - t)
    prec = np.linalg.inv(cov) + s * np.eye(d)
    c = symmetrize(np.linalg.inv(prec))
    b = x / (1.0 - t)
    # mean = x + (1-t) x D with D = (S-I)(I+t(S-I))^{-1}; exact zero drift for S = I
    dev = cov - np.eye(d)
    drift_map = symmetrize(np.linalg.solve(np.eye(d) + t * dev, dev))
    mean = x + (1.0 - t) * (x @ drift_map)
    _, logdet_c = np.linalg.slogdet(c)
    _, logdet_s = np.linalg.slogdet(cov)
    log_mass = 0.5 * np.sum(b * mean, axis=-1) + 0.5 * (logdet_c - logdet_s)
    return PosteriorBatch(t, x, mean, np.broadcast_to(c, (x.shape[0], d, d)), log_mass)


def mixture_posterior_weights(m: Measure, t: float, x) -> np.ndarray:
    """Posterior component responsibilities, shape (n, K)."""
    return _mixture_parts(m, _check_time(t), np.asarray(x, dtype=float))[0]


def _mixture_parts(m, t, x):
    d = m.dim
    s = t / (1.0 - t)
    precs = np.linalg.inv(m.covs)
    pc = precs + s * np.eye(d)
    cs = symmetrize(np.linalg.inv(pc))
    b = np.einsum("kij,kj->ki", precs, m.means)[None, :, :] + x[:, None, :] / (1.0 - t)
    means = np.einsum("kij,nkj->nki", cs, b)
    quad_mu = np.einsum("ki,ki->k", m.means, np.einsum("kij,kj->ki", precs, m.means))
    logdet_c = np.linalg.slogdet(cs)[1]
    logdet_s = np.linalg.slogdet(m.covs)[1]
    logw = (np.log(m.weights) + 0.5 * np.einsum("nki,nki->nk", b, means)
            - 0.5 * quad_mu + 0.5 * (logdet_c - logdet_s))
    log_mass = logsumexp(logw, axis=1)
    resp = np.exp(logw - log_mass[:, None])
    return resp, means, cs, log_mass


def _mixture_posterior(m, t, x):
    resp, means, cs, log_mass = _mixture_parts(m, t, x)
    mean = np.einsum("nk,nki->ni", resp, means)
    dev = means - mean[:, None, :]
    cov = np.einsum("nk,kij->nij", resp, cs) + np.einsum("nk,nki,nkj->nij", resp, dev, dev)
    return PosteriorBatch(t, x, mean, symmetrize(cov), log_mass)


# ----------------------------------------------------------------------
# quadrature engine for potential-kind measures
# ----------------------------------------------------------------------

def _separable_posterior(factors, t, x):
    n, d = x.shape
    mean = np.empty((n, d))
    var = np.empty((n, d))
    log_mass = np.zeros(n)
    for i, (logp, grad, hess) in enumerate(factors):
        def lp(y, logp=logp):
            return logp(y[..., 0])

        def gr(y, grad=grad):
            return grad(y)

        def he(y, hess=hess):
            return hess(y)[..., None]

        res = _quadrature_posterior(lp, gr, he, t, x[:, i:i + 1])
        mean[:, i] = res.mean[:, 0]
        var[:, i] = res.cov[:, 0, 0]
        log_mass += res.log_mass
    cov = var[:, :, None] * np.eye(d)
    return PosteriorBatch(t, x, mean, cov, log_mass)


def _quadrature_posterior(logp, grad, hess, t, x):
    n, d = x.shape
    chunk = 1 << 16
    mean = np.empty((n, d))
    cov = np.empty((n, d, d))
    log_mass = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        mean[sl], cov[sl], log_mass[sl] = _quadrature_chunk(logp, grad, hess, t, x[sl])
    return PosteriorBatch(t, x, mean, cov, log_mass)


def _make_logt(logp, s):
    def logt(y, b):
        # y is (n, d) with b (n, d), or (n, K, d) with b (n, 1, d)
        return logp(y) + np.sum(b * y, axis=-1) - 0.5 * s * np.sum(y * y, axis=-1)
    return logt


def _newton_mode(logt, grad, hess, s, b, y0):
    """Damped Newton ascent on the tilted density, which is log-concave for t > 0."""
    y = y0.copy()
    d = y.shape[1]
    eye = np.eye(d)
    f = logt(y, b)
    active = np.ones(y.shape[0], dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        ya, ba, fa = y[idx], b[idx], f[idx]
        g = grad(ya) + ba - s * ya
        neg_h = sym_apply(s * eye - hess(ya), lambda w: np.maximum(w, 1e-10))
        step = np.linalg.solve(neg_h, g[..., None])[..., 0]
        alpha = np.ones(idx.size)
        for _bt in range(40):
            cand = ya + alpha[:, None] * step
            fc = logt(cand, ba)
            ok = fc >= fa - 1e-13 * (1.0 + np.abs(fa))
            if ok.all():
                break
            alpha = np.where(ok, alpha, 0.5 * alpha)
        better = fc >= fa - 1e-13 * (1.0 + np.abs(fa))
        y[idx] = np.where(better[:, None], cand, ya)
        f[idx] = np.where(better, fc, fa)
        moved = np.max(np.abs(alpha[:, None] * step), axis=1)
        active[idx] = better & (moved > 1e-11 * (1.0 + np.max(np.abs(cand), axis=1)))
    return y


def _quadrature_chunk(logp, grad, hess, t, x):
    n, d = x.shape
    s = t / (1.0 - t)
    b = x / (1.0 - t)
    logt = _make_logt(logp, s)
    mode = _newton_mode(logt, grad, hess, s, b, x.copy())
    neg_h = s * np.eye(d) - hess(mode)
    scale = sym_apply(neg_h, lambda w: 1.0 / np.sqrt(np.maximum(w, 1e-300)), floor=1e-12)
    center = mode.copy()
    start = _START[d]
    nodes = np.full(n, start)
    fresh = np.ones(n, dtype=bool)
    resets = np.zeros(n, dtype=int)
    prev_mean = np.zeros((n, d))
    prev_cov = np.zeros((n, d, d))
    mean = np.empty((n, d))
    cov = np.empty((n, d, d))
    log_mass = np.empty(n)
    finished = np.zeros(n, dtype=bool)
    todo = np.arange(n)
    while todo.size:
        # states sharing a node count and box are refined together
        for k in np.unique(nodes[todo]):
            sel = todo[nodes[todo] == k]
            mu, c, lm, mz, cz = _level(logt, b[sel], center[sel], scale[sel], int(k))
            w = np.linalg.eigvalsh(cz)
            off = (np.max(np.abs(mz), axis=1) > 0.5) | (w[:, 0] < 0.5625) | (w[:, -1] > 1.5625)
            sd = np.sqrt(np.maximum(np.diagonal(c, axis1=1, axis2=2), 1e-300))
            dm = np.max(np.abs(mu - prev_mean[sel]) / sd, axis=1)
            dc = np.max(np.abs(c - prev_cov[sel]), axis=(1, 2)) / np.max(np.abs(c), axis=(1, 2))
            done = ~fresh[sel] & (dm < MOMENT_RTOL) & (dc < MOMENT_RTOL)
            fin = sel[done]
            mean[fin], cov[fin], log_mass[fin] = mu[done], c[done], lm[done]
            finished[fin] = True
            # a badly scaled first box is re-centered on its own moments and retried
            redo = off & fresh[sel] & ~done
            rsel = sel[redo]
            center[rsel] = mu[redo]
            scale[rsel] = sym_apply(c[redo], np.sqrt, floor=1e-12)
            resets[rsel] += 1
            grow = ~redo & ~done
            gsel = sel[grow]
            nodes[gsel] = 2 * nodes[gsel] - 1
            fresh[gsel] = False
            prev_mean[gsel], prev_cov[gsel] = mu[grow], c[grow]
            if np.any(resets > MAX_RESETS) or np.any(nodes[gsel] > _max_nodes(d)):
                raise QuadratureNoConvergence(
                    f"posterior moments did not settle after {MAX_DOUBLINGS} doublings (t={t})"
                )
        todo = todo[~finished[todo]]
    return mean, symmetrize(cov), log_mass


def _max_nodes(d: int) -> int:
    n = _START[d]
    for _ in range(MAX_DOUBLINGS):
        n = 2 * n - 1
    return n


def _level(logt, b, center, scale, nodes):
    d = center.shape[1]
    z1 = np.linspace(-LOCAL_HALF_WIDTH, LOCAL_HALF_WIDTH, nodes)
    h = z1[1] - z1[0]
    grids = np.meshgrid(*([z1] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    zz = (z[:, :, None] * z[:, None, :]).reshape(z.shape[0], d * d)
    n = center.shape[0]
    mz = np.empty((n, d))
    m2 = np.empty((n, d * d))
    log_mass = np.empty(n)
    step = max(1, _CHUNK_ELEMS // (z.shape[0] * d))
    for lo in range(0, n, step):
        sl = slice(lo, lo + step)
        y = center[sl, None, :] + np.matmul(z[None, :, :], np.swapaxes(scale[sl], 1, 2))
        lt = logt(y, b[sl, None, :])
        top = np.max(lt, axis=1, keepdims=True)
        w = np.exp(lt - top)
        tot = w.sum(axis=1)
        log_mass[sl] = top[:, 0] + np.log(tot)
        w /= tot[:, None]
        mz[sl] = w @ z
        m2[sl] = w @ zz
    log_mass += d * math.log(h) + np.linalg.slogdet(scale)[1]
    cz = symmetrize(m2.reshape(n, d, d) - mz[:, :, None] * mz[:, None, :])
    mean = center + np.einsum("nij,nj->ni", scale, mz)
    cov = scale @ cz @ scale
    return mean, symmetrize(cov), log_mass, mz, cz


# ----------------------------------------------------------------------
# semigroup oracle
# ----------------------------------------------------------------------

def log_heat_smoothed(m: Measure, t: float, x, nodes: int) -> np.ndarray:
    """``ln P_{1-t} f(x)`` up to an x-independent constant, on a fixed prior-scaled box.

    ``f`` is the density of ``m`` relative to the standard Gaussian and
    ``P_s f(x) = E f(x + sqrt(s) G)``. The box is centered at the origin and
    whitened by ``Cov(m)``; it never looks at the posterior.
    """
    t = _check_time(t)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = m.dim
    s = 1.0 - t
    root = sym_apply(m.covariance, np.sqrt)
    z1 = np.linspace(-14.0, 14.0, nodes)
    grids = np.meshgrid(*([z1] * d), indexing="ij")
    y = np.stack([g.ravel() for g in grids], axis=-1) @ root
    base = m.unnormalized_log_density(y) + 0.5 * np.sum(y * y, axis=-1)
    diff = y[None, :, :] - x[:, None, :]
    return logsumexp(base[None, :] - 0.5 * np.sum(diff * diff, axis=-1) / s, axis=1)


def heat_loggrad(m: Measure, t: float, x, rtol: float = 1e-9) -> np.ndarray:
    """``grad ln P_{1-t} f(x)`` by quadrature plus central differences.

    Independent of :func:`posterior_moments`; serves as an oracle for the drift.
    The step is ``1e-5 (1 + |x|)``; the node count doubles until the gradient
    settles.
    """
    t = _check_time(t)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = m.dim
    if d > 2 and m.axis_factors() is None and m.kind == "potential":
        raise QuadratureNoConvergence("semigroup oracle supports dim <= 2 for potentials")
    h = 1e-5 * (1.0 + np.linalg.norm(x))
    pts = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        pts.extend([x + e, x - e])
    pts = np.array(pts)
    nodes = {1: 257, 2: 65, 3: 25}[d]
    max_nodes = {1: 1 << 15, 2: 1025, 3: 129}[d]
    prev = None
    while True:
        lp = log_heat_smoothed(m, t, pts, nodes)
        g = (lp[0::2] - lp[1::2]) / (2.0 * h)
        if prev is not None and np.max(np.abs(g - prev)) <= rtol * (1.0 + np.max(np.abs(g))) * 1e3:
            return g
        if 2 * nodes - 1 > max_nodes:
            if prev is None:
                raise QuadratureNoConvergence("semigroup oracle did not converge")
            return g
        prev = g
        nodes = 2 * nodes - 1
