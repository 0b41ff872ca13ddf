"""Tensor trapezoid rules in whitened coordinates.

For analytic, rapidly decaying integrands the trapezoid rule on a wide box
converges geometrically in the number of nodes, so "adaptive" here means
doubling the node count until two consecutive levels agree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import QuadratureNoConvergence
from .linalg import sym_sqrt

BOX_HALF_WIDTH = 12.0
_MAX_NODES = {1: 1 << 15, 2: 1025, 3: 193}
_START_NODES = {1: 129, 2: 65, 3: 25}
_CHUNK = 1 << 18


def tensor_nodes(n: int, d: int, half_width: float) -> tuple[np.ndarray, float]:
    """Trapezoid nodes on [-h, h]^d and the log of the per-node cell volume."""
    z = np.linspace(-half_width, half_width, n)
    step = z[1] - z[0]
    grids = np.meshgrid(*([z] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    return nodes, d * np.log(step)


@dataclass
class BoxIntegral:
    log_mass: float
    expectations: dict
    residual: float
    nodes: int


def box_expectations(
    log_density,
    center: np.ndarray,
    cov: np.ndarray,
    funcs: dict | None = None,
    rtol: float = 1e-10,
    half_width: float = BOX_HALF_WIDTH,
) -> BoxIntegral:
    """Integrate ``exp(log_density)`` and expectations of ``funcs`` over R^d.

    ``cov`` sets the whitening scale of the box. ``funcs`` maps a name to a
    callable ``(y, logp) -> values`` evaluated on node arrays of shape (N, d);
    the returned expectations are with respect to the normalized density.
    The residual is the largest change between the last two refinement levels.
    """
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    scale = sym_sqrt(np.atleast_2d(cov))
    _, logdet = np.linalg.slogdet(scale)
    funcs = funcs or {}
    n = _START_NODES.get(d)
    if n is None:
        raise QuadratureNoConvergence(f"box quadrature supports dim <= 3, got {d}")
    prev = None
    while True:
        cur = _box_level(log_density, center, scale, logdet, funcs, n, half_width)
        if prev is not None:
            deltas = [abs(cur[0] - prev[0])]
            for k in funcs:
                a, b = np.asarray(cur[1][k]), np.asarray(prev[1][k])
                deltas.append(np.max(np.abs(a - b) / (1.0 + np.abs(a))))
            residual = float(max(deltas))
            if residual < rtol:
                return BoxIntegral(cur[0], cur[1], residual, n)
        if 2 * n - 1 > _MAX_NODES[d]:
            if prev is not None:
                return BoxIntegral(cur[0], cur[1], residual, n)
            raise QuadratureNoConvergence("box quadrature did not converge")
        prev = cur
        n = 2 * n - 1


def _box_level(log_density, center, scale, logdet, funcs, n, half_width):
    d = center.shape[0]
    z, log_cell = tensor_nodes(n, d, half_width)
    logps = []
    sums = {k: None for k in funcs}
    for start in range(0, z.shape[0], _CHUNK):
        y = center + z[start:start + _CHUNK] @ scale.T
        lp = np.asarray(log_density(y), dtype=float)
        logps.append(lp)
    lp_all = np.concatenate(logps)
    finite = np.isfinite(lp_all)
    top = np.max(lp_all[finite])
    log_mass = float(logsumexp(lp_all[finite]) + log_cell + logdet)
    w_all = np.where(finite, np.exp(np.where(finite, lp_all, top) - top), 0.0)
    w_all /= w_all.sum()
    offset = 0
    for start in range(0, z.shape[0], _CHUNK):
        y = center + z[start:start + _CHUNK] @ scale.T
        w = w_all[offset:offset + y.shape[0]]
        lp = lp_all[offset:offset + y.shape[0]] - log_mass
        offset += y.shape[0]
        mask = w > 0
        for k, f in funcs.items():
            vals = np.asarray(f(y[mask], lp[mask]), dtype=float)
            contrib = np.tensordot(w[mask], vals, axes=(0, 0))
            sums[k] = contrib if sums[k] is None else sums[k] + contrib
    return log_mass, sums


GREGORY_POINTS = 6


def _gregory_unit(n: int, k: int) -> np.ndarray:
    # trapezoid on 0..n-1 with k corrected weights at each end, solved so
    # that polynomials up to degree 2k-1 integrate exactly
    x = np.linspace(-1.0, 1.0, n)
    w = np.full(n, 2.0 / (n - 1))
    w[0] = w[-1] = 1.0 / (n - 1)
    ends = np.r_[np.arange(k), np.arange(n - k, n)]
    leg = np.polynomial.legendre.legvander(x, 2 * k - 1).T
    exact = np.zeros(2 * k)
    exact[0] = 2.0
    corr = np.linalg.solve(leg[:, ends], exact - leg @ w)
    w[ends] += corr
    return w * (n - 1) / 2.0


def time_weights_u(u: np.ndarray, points: int = GREGORY_POINTS) -> np.ndarray:
    """Quadrature weights on the nodes ``u`` (increasing).

    Uniform spacing with enough nodes gets the trapezoid rule with
    Gregory-type end corrections on ``points`` nodes at each end, exact for
    polynomials of degree ``2 * points - 1``. Short uniform grids use Simpson
    and any other spacing falls back to the trapezoid rule.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    w = np.zeros(n)
    if n < 2:
        return w
    h = np.diff(u)
    uniform = np.allclose(h, h[0], rtol=1e-9, atol=0.0)
    if not uniform or n < 4:
        w[:-1] += h / 2
        w[1:] += h / 2
        return w
    step = h[0]
    if n >= 4 * points:
        return _gregory_unit(n, points) * step
    m = n if n % 2 == 1 else n - 3
    if m >= 3:
        simpson = np.ones(m)
        simpson[1:-1:2] = 4.0
        simpson[2:-1:2] = 2.0
        w[:m] += simpson * step / 3.0
    if n % 2 == 0:
        w[m - 1:m + 3] += np.array([1.0, 3.0, 3.0, 1.0]) * step * 3.0 / 8.0
    return w


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    h = np.diff(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w
