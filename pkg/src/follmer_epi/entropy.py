"""Relative entropies to Gaussians by three independent routes, and the EPI deficit.

Routes for ``D(X || G)``:

* ``direct-quadrature`` -- integrate ``p ln(p/q)`` on a whitened box;
* ``drift-energy``      -- half the time integral of ``E|v_t|^2``;
* ``gamma-identity``    -- half the integral of ``Tr E[(Gamma_t - I)^2] / (1-t)``;
* ``gaussian-closed-form`` for Gaussian inputs.

The two ensemble routes stop at ``1 - epsilon``. Their tail is bounded by
``epsilon * I(X || G) / 2`` with ``I`` the relative Fisher information: the
drift is a martingale, so ``E|v_t|^2`` never exceeds ``E|v_1|^2 = I``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConvolutionUnavailable, QuadratureNoConvergence
from .linalg import gaussian_kl, max_eig
from .measures import LOG_2PI, Measure, gaussian, mixture, scaled
from .quadrature import box_expectations, tensor_nodes
from .simulate import PathEnsemble, TimeGrid, batch_means, simulate_bridge

DIRECT_RTOL = 1e-10
ROUNDING_TOL = 1e-12


@dataclass
class EntropyEstimate:
    """A relative entropy in nats together with its error terms."""

    value: float
    route: str
    stderr: float = 0.0
    tail_bound: float = 0.0
    residual: float = 0.0

    @property
    def budget(self) -> float:
        """``2 stderr + tail bound + quadrature residual``."""
        return 2.0 * self.stderr + self.tail_bound + self.residual

    def to_dict(self) -> dict:
        return {"value": self.value, "route": self.route, "stderr": self.stderr,
                "tail_bound": self.tail_bound, "residual": self.residual, "budget": self.budget}


# ----------------------------------------------------------------------
# densities that the direct route can integrate
# ----------------------------------------------------------------------

@dataclass
class ConvolvedDensity:
    """Law of ``U + V`` for independent ``U``, ``V`` with ``U`` the narrower one.

    The density is ``sum_j w_j p_V(z - u_j)`` over a trapezoid discretization of ``U``.
    """

    narrow: Measure
    wide: Measure
    nodes_per_axis: int
    dim: int = field(init=False)
    covariance: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dim = self.narrow.dim
        self.covariance = self.narrow.covariance + self.wide.covariance
        d = self.dim
        z, log_cell = tensor_nodes(self.nodes_per_axis, d, 12.0)
        root = np.linalg.cholesky(self.narrow.covariance)
        u = z @ root.T
        logw = self.narrow.log_density(u)
        self._u = u
        self._logw = logw - logsumexp(logw)

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1, self.dim)
        out = np.empty(flat.shape[0])
        step = max(1, (1 << 22) // self._u.shape[0])
        for lo in range(0, flat.shape[0], step):
            diff = flat[lo:lo + step, None, :] - self._u[None, :, :]
            out[lo:lo + step] = logsumexp(self.wide.log_density(diff) + self._logw, axis=1)
        return out.reshape(z.shape[:-1])


def convolve(mx: Measure, my: Measure, lam: float):
    """The law of ``sqrt(lam) X + sqrt(1-lam) Y`` for independent X, Y.

    Gaussian and mixture inputs give an exact mixture (or Gaussian). Potential
    inputs give a :class:`ConvolvedDensity`, or a list of per-axis 1D
    convolutions when both inputs are product laws.
    """
    if mx.dim != my.dim:
        raise ValueError("measures must share a dimension")
    a, b = math.sqrt(lam), math.sqrt(1.0 - lam)
    if mx.kind != "potential" and my.kind != "potential":
        wx, mux, cx = _as_mixture(mx)
        wy, muy, cy = _as_mixture(my)
        weights = np.outer(wx, wy).ravel()
        means = (a * mux[:, None, :] + b * muy[None, :, :]).reshape(-1, mx.dim)
        covs = (lam * cx[:, None] + (1.0 - lam) * cy[None, :]).reshape(-1, mx.dim, mx.dim)
        if weights.size == 1:
            return gaussian(covs[0], name="convolution")
        return mixture(weights, means, covs, name="convolution")
    sx, sy = scaled(mx, a), scaled(my, b)
    if _is_product(sx) and _is_product(sy) and mx.dim > 1:
        return [_convolve_1d(_marginal(sx, i), _marginal(sy, i)) for i in range(mx.dim)]
    if mx.dim > 2:
        raise ConvolutionUnavailable("potential convolutions need dim <= 2 or product laws")
    return _convolve_pair(sx, sy)


def _convolve_pair(u: Measure, v: Measure):
    if max_eig(u.covariance) > max_eig(v.covariance):
        u, v = v, u
    nodes = 513 if u.dim == 1 else 65
    return ConvolvedDensity(u, v, nodes)


def _convolve_1d(u: Measure, v: Measure):
    if u.kind == "gaussian" and v.kind == "gaussian":
        return gaussian(u.covariance + v.covariance, name="convolution")
    return _convolve_pair(u, v)


def _as_mixture(m: Measure):
    if m.kind == "gaussian":
        return np.ones(1), np.zeros((1, m.dim)), m.covariance[None]
    return m.weights, m.means, m.covs


def _is_product(m: Measure) -> bool:
    if m.kind == "gaussian":
        c = m.covariance
        return not np.count_nonzero(c - np.diag(np.diag(c)))
    return m.axis_factors() is not None


def _marginal(m: Measure, i: int) -> Measure:
    """One coordinate of a product law, as a 1D measure."""
    from .measures import CallablePotential, from_potential

    if m.kind == "gaussian":
        return gaussian([[m.covariance[i, i]]])
    logp, grad, hess = m.axis_factors()[i]
    base = CallablePotential(
        1, lambda y: logp(y[..., 0]), lambda y: grad(y), lambda y: hess(y)[..., None],
        name=f"{m.name}[{i}]", log_normalizer=0.0,
    )
    base.moments = lambda: (np.zeros(1), m.covariance[i:i + 1, i:i + 1])
    return from_potential(base, name=f"{m.name}[{i}]")


# ----------------------------------------------------------------------
# direct route
# ----------------------------------------------------------------------

def relative_entropy_direct(m, ref_cov=None) -> EntropyEstimate:
    """``D(m || N(0, ref_cov))`` by closed form or whitened-box quadrature.

    ``m`` may be a :class:`Measure`, a :class:`ConvolvedDensity`, or a list of
    1D factors of a product law. The residual is the last refinement change.
    """
    if isinstance(m, list):
        parts = [relative_entropy_direct(f, None if ref_cov is None else [[np.asarray(ref_cov)[i, i]]])
                 for i, f in enumerate(m)]
        return EntropyEstimate(sum(p.value for p in parts), parts[0].route if len(parts) else "direct-quadrature",
                               residual=sum(p.residual for p in parts))
    d = m.dim
    ref = np.eye(d) if ref_cov is None else np.atleast_2d(np.asarray(ref_cov, dtype=float))
    if isinstance(m, Measure) and m.kind == "gaussian":
        return EntropyEstimate(max(gaussian_kl(m.covariance, ref), 0.0), "gaussian-closed-form")
    if isinstance(m, Measure):
        factors = m.axis_factors()
        ref_diag = not np.count_nonzero(ref - np.diag(np.diag(ref)))
        if factors is not None and d > 1 and ref_diag:
            parts = [relative_entropy_direct(_marginal(m, i), [[ref[i, i]]]) for i in range(d)]
            return EntropyEstimate(sum(p.value for p in parts), "direct-quadrature",
                                   residual=sum(p.residual for p in parts))
        if m.kind == "potential" and d > 2:
            raise QuadratureNoConvergence("direct entropy of non-product potentials needs dim <= 2")
        logp = m.unnormalized_log_density
    else:
        logp = m.log_density
    ref_inv = np.linalg.inv(ref)
    ref_logdet = np.linalg.slogdet(ref)[1]

    def integrand(y, lp):
        logq = -0.5 * np.einsum("ni,ij,nj->n", y, ref_inv, y) - 0.5 * (d * LOG_2PI + ref_logdet)
        return lp - logq

    res = box_expectations(logp, np.zeros(d), m.covariance, {"kl": integrand}, rtol=DIRECT_RTOL)
    value = float(res.expectations["kl"])
    residual = res.residual * (1.0 + abs(value))
    return EntropyEstimate(max(value, 0.0), "direct-quadrature", residual=residual)


def relative_fisher_information(m: Measure) -> float:
    """``I(X || G) = E |grad ln p(X) + X|^2``, the terminal drift energy."""
    d = m.dim
    if m.kind == "gaussian":
        c = m.covariance
        return float(np.trace(c) - 2 * d + np.trace(np.linalg.inv(c)))
    factors = m.axis_factors()
    if factors is not None and d > 1:
        return float(sum(relative_fisher_information(_marginal(m, i)) for i in range(d)))
    if d > 3 or (d == 3 and m.kind == "potential"):
        raise QuadratureNoConvergence("Fisher information quadrature needs dim <= 2")

    def integrand(y, _):
        s = m.grad_log_density(y) + y
        return np.sum(s * s, axis=-1)

    res = box_expectations(m.unnormalized_log_density, np.zeros(d), m.covariance,
                           {"fisher": integrand}, rtol=1e-9)
    return float(res.expectations["fisher"])


def tail_bound(m: Measure, epsilon: float) -> float:
    return 0.5 * epsilon * relative_fisher_information(m)


# ----------------------------------------------------------------------
# ensemble routes
# ----------------------------------------------------------------------

def drift_energy_per_path(e: PathEnsemble) -> np.ndarray:
    """``(1/2) int_0^{1-eps} |v_t|^2 dt`` for each path."""
    w = e.grid.weights()
    return 0.5 * np.einsum("k,kn->n", w, np.einsum("kni,kni->kn", e.drift, e.drift))


def gamma_identity_per_path(e: PathEnsemble) -> np.ndarray:
    """``(1/2) int_0^{1-eps} Tr (Gamma_t - I)^2 / (1-t) dt`` for each path."""
    w = e.grid.weights_over()
    d = e.dim
    g = e.gamma
    if g.strides[1] == 0:
        dev = g[:, 0] - np.eye(d)
        per = np.einsum("kij,kij->k", dev, dev)
        return np.full(e.n_paths, 0.5 * float(w @ per))
    out = np.zeros(e.n_paths)
    for k in range(e.grid.size):
        dev = g[k] - np.eye(d)
        out += 0.5 * w[k] * np.einsum("nij,nij->n", dev, dev)
    return out


def relative_entropy_drift(m: Measure, e: PathEnsemble, tail: float | None = None) -> EntropyEstimate:
    """Drift-energy estimate of ``D(m || G)`` from an ensemble of ``m``."""
    value, se = batch_means(drift_energy_per_path(e))
    tail = tail_bound(m, e.grid.epsilon) if tail is None else tail
    return EntropyEstimate(float(value), "drift-energy", float(se), tail)


def relative_entropy_gamma(m: Measure, e: PathEnsemble, tail: float | None = None) -> EntropyEstimate:
    """Estimate of ``D(m || G)`` from the Gamma process of an ensemble of ``m``."""
    value, se = batch_means(gamma_identity_per_path(e))
    tail = tail_bound(m, e.grid.epsilon) if tail is None else tail
    return EntropyEstimate(float(value), "gamma-identity", float(se), tail)


def differential_entropy(m: Measure, d: EntropyEstimate) -> float:
    """``h(X)`` in nats, derived from ``D(X || G)`` and the second moment."""
    return 0.5 * m.dim * LOG_2PI + 0.5 * float(np.trace(m.covariance)) - d.value


# ----------------------------------------------------------------------
# deficit
# ----------------------------------------------------------------------

@dataclass
class DeficitReport:
    """The deficit ``lam D(X) + (1-lam) D(Y) - D(sqrt(lam) X + sqrt(1-lam) Y)``."""

    lam: float
    d_x: EntropyEstimate
    d_y: EntropyEstimate
    d_conv: EntropyEstimate
    deficit: float
    route: str
    bounds: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def budget(self) -> float:
        return self.lam * self.d_x.budget + (1.0 - self.lam) * self.d_y.budget + self.d_conv.budget

    def attach(self, bound) -> None:
        """Certify ``rhs <= deficit + tolerance`` for an applicable bound.

        The tolerance is the deficit budget plus the bound's own statistical
        spread (two standard errors) and propagated uncertainty, plus a
        rounding floor so that equality cases pass.
        """
        if bound.applicable:
            tol = (self.budget + 2.0 * bound.stderr + bound.uncertainty
                   + ROUNDING_TOL * (1.0 + abs(self.deficit)))
            bound.tolerance = tol
            bound.margin = self.deficit - bound.rhs
            bound.ratio = self.deficit / bound.rhs if bound.rhs > 0 else None
            bound.passed = bound.rhs <= self.deficit + tol
        else:
            bound.margin = None
            bound.passed = True
        self.bounds.append(bound)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam, "route": self.route, "deficit": self.deficit, "budget": self.budget,
            "dX": self.d_x.to_dict(), "dY": self.d_y.to_dict(), "dConv": self.d_conv.to_dict(),
            "bounds": [b.to_dict() for b in self.bounds], "provenance": self.provenance,
        }


def deficit(mx: Measure, my: Measure, lam: float, entropies=None) -> DeficitReport:
    """Deficit by the direct route: closed form or quadrature for all three terms.

    ``entropies`` may supply precomputed ``(dX, dY)`` estimates.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError("lambda must lie in (0, 1)")
    if entropies is None:
        dx, dy = relative_entropy_direct(mx), relative_entropy_direct(my)
    else:
        dx, dy = entropies
    conv = convolve(mx, my, lam)
    dc = relative_entropy_direct(conv)
    value = lam * dx.value + (1.0 - lam) * dy.value - dc.value
    route = "closed-form" if {dx.route, dy.route, dc.route} == {"gaussian-closed-form"} else "direct"
    return DeficitReport(lam, dx, dy, dc, value, route, provenance={
        "measures": [mx.fingerprint(), my.fingerprint()]})


def deficit_monte_carlo(mx: Measure, my: Measure, lam: float, grid: TimeGrid,
                        n_paths: int, seed: int, threads: int = 1, route: str = "drift") -> DeficitReport:
    """Deficit with every entropy from an ensemble (drift or Gamma route).

    The convolution must be Gaussian or a mixture so that it can be simulated.
    """
    conv = convolve(mx, my, lam)
    if not isinstance(conv, Measure):
        raise ConvolutionUnavailable("Monte Carlo deficit needs a Gaussian or mixture convolution")
    est = relative_entropy_drift if route == "drift" else relative_entropy_gamma
    parts = []
    for i, m in enumerate((mx, my, conv)):
        e = simulate_bridge(m, grid, n_paths, seed + i, threads)
        parts.append(est(m, e))
    dx, dy, dc = parts
    value = lam * dx.value + (1.0 - lam) * dy.value - dc.value
    return DeficitReport(lam, dx, dy, dc, value, f"monte-carlo-{route}", provenance={
        "measures": [mx.fingerprint(), my.fingerprint(), conv.fingerprint()],
        "seeds": [seed, seed + 1, seed + 2], "grid": grid.describe(), "n_paths": n_paths})
