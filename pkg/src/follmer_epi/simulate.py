"""Ensembles of the Föllmer process and their per-time moment curves.

Two samplers are provided. The bridge sampler uses that, given the endpoint,
the process is a Brownian bridge, so ``X_t = t X_1 + sqrt(t(1-t)) G`` is exact
at every node. The Euler sampler integrates the SDE and exists to validate
the bridge picture. Both attach ``Gamma_t`` and ``v_t`` from the posterior.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import DriftBlowup, GridMismatch
from .measures import Measure, sample
from .posterior import posterior_batch
from .quadrature import GREGORY_POINTS, time_weights_u

N_BATCHES = 20
BLOCK = 4096
DRIFT_LIMIT = 1e6


def derive_seed(master: int, *keys: int) -> int:
    """A 64-bit seed for the substream identified by ``keys``."""
    ss = np.random.SeedSequence(int(master) % (1 << 64), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


STREAM_TERMINAL = 1
STREAM_BRIDGE = 2
STREAM_EULER = 3


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Increasing times in ``[0, 1 - epsilon]``.

    The geometric scheme has ``1 - t_k = rho^k`` so nodes cluster near 1,
    where the integrands of the entropy identities carry a ``1/(1-t)`` weight.
    """

    nodes: np.ndarray
    epsilon: float
    scheme: str
    rho: float | None = None

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 3:
            raise ValueError("a grid needs at least three nodes")
        if not (0.0 < self.epsilon <= 0.01):
            raise ValueError("epsilon must lie in (0, 0.01]")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("grid nodes must be strictly increasing from t >= 0")
        if abs(t[-1] - (1.0 - self.epsilon)) > 1e-14:
            raise ValueError("the last node must equal 1 - epsilon")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def geometric(cls, n_nodes: int = 200, epsilon: float = 1e-4) -> "TimeGrid":
        rho = epsilon ** (1.0 / (n_nodes - 1))
        k = np.arange(n_nodes)
        t = 1.0 - rho ** k
        t[-1] = 1.0 - epsilon
        return cls(t, epsilon, "geometric", rho)

    @classmethod
    def geometric_rho(cls, epsilon: float = 1e-4, rho: float = 0.9) -> "TimeGrid":
        """Geometric grid no coarser than ratio ``rho`` that lands exactly on ``1 - epsilon``."""
        n_nodes = int(math.ceil(math.log(epsilon) / math.log(rho))) + 1
        return cls.geometric(n_nodes, epsilon)

    @classmethod
    def uniform(cls, n_nodes: int = 101, epsilon: float = 1e-4) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0 - epsilon, n_nodes), epsilon, "uniform")

    @property
    def size(self) -> int:
        return self.nodes.size

    def weights_over(self, start: int = 0, points: int = GREGORY_POINTS) -> np.ndarray:
        """Weights ``w_k`` with ``sum w_k g(t_k) ~ int_{t_start}^{1-eps} g(t)/(1-t) dt``.

        Nodes before ``start`` get weight 0. ``points`` sets the order of the
        end corrections; a lower order gives an error estimate.
        """
        w = np.zeros(self.size)
        t = self.nodes[start:]
        if self.scheme == "geometric":
            w[start:] = time_weights_u(-np.log1p(-t), points)
        else:
            w[start:] = time_weights_u(t, points) / (1.0 - t)
        return w

    def weights(self, start: int = 0, points: int = GREGORY_POINTS) -> np.ndarray:
        """Weights ``w_k`` with ``sum w_k f(t_k) ~ int_{t_start}^{1-eps} f(t) dt``."""
        if self.scheme == "geometric":
            return self.weights_over(start, points) * (1.0 - self.nodes)
        w = np.zeros(self.size)
        w[start:] = time_weights_u(self.nodes[start:], points)
        return w

    @property
    def step(self) -> float:
        """Spacing in the uniform coordinate (``-ln(1-t)`` or ``t``)."""
        if self.scheme == "geometric":
            return -math.log(self.rho) if self.rho else float(-np.log1p(-self.nodes[1]))
        return float(self.nodes[1] - self.nodes[0])

    def jacobian(self) -> np.ndarray:
        """``dt/ds`` at each node, ``s`` the uniform coordinate."""
        if self.scheme == "geometric":
            return 1.0 - self.nodes
        return np.ones(self.size)

    def describe(self) -> dict:
        return {"scheme": self.scheme, "n_nodes": int(self.size), "epsilon": self.epsilon,
                "rho": self.rho, "first": float(self.nodes[0]), "last": float(self.nodes[-1])}

    def same_as(self, other: "TimeGrid") -> bool:
        return self.scheme == other.scheme and self.size == other.size and np.array_equal(self.nodes, other.nodes)


@dataclass(eq=False)
class PathEnsemble:
    """Per-node snapshots ``(X_t, Gamma_t, v_t)`` for ``n_paths`` independent paths.

    ``gamma`` has shape (K, n, d, d), ``drift`` (K, n, d). For the bridge sampler
    ``X_t`` is rebuilt from the stored endpoint and bridge noise on access.
    """

    grid: TimeGrid
    n_paths: int
    seed: int
    method: str
    fingerprint: str
    dim: int
    gamma: np.ndarray
    drift: np.ndarray
    terminal: np.ndarray
    noise: np.ndarray | None = None
    states: np.ndarray | None = None
    _x_cache: np.ndarray | None = field(default=None, repr=False)

    @property
    def x(self) -> np.ndarray:
        if self.states is not None:
            return self.states
        if self._x_cache is None:
            t = self.grid.nodes[:, None, None]
            self._x_cache = t * self.terminal[None] + np.sqrt(t * (1.0 - t)) * self.noise[None]
        return self._x_cache

    def provenance(self) -> dict:
        return {"method": self.method, "n_paths": self.n_paths, "seed": self.seed,
                "measure": self.fingerprint, "grid": self.grid.describe()}


def _gamma_store(m: Measure, k: int, n: int):
    d = m.dim
    if m.kind == "gaussian":
        return np.empty((k, 1, d, d))
    return np.empty((k, n, d, d))


def _finish_gamma(m: Measure, gamma: np.ndarray, n: int) -> np.ndarray:
    if m.kind == "gaussian":
        return np.broadcast_to(gamma, (gamma.shape[0], n) + gamma.shape[2:])
    return gamma


def simulate_bridge(m: Measure, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Exact per-node samples via the Brownian-bridge representation.

    Each path draws ``X_1 ~ m`` and one ``G ~ N(0, I)`` shared by all nodes, so
    neighbouring nodes are strongly coupled and time differences of per-path
    quantities have small variance.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    d = m.dim
    x1 = sample(m, n_paths, derive_seed(seed, STREAM_TERMINAL))
    g = _block_normals(seed, STREAM_BRIDGE, n_paths, d)
    k_nodes = grid.size
    gamma = _gamma_store(m, k_nodes, n_paths)
    drift = np.empty((k_nodes, n_paths, d))

    def work(k):
        t = grid.nodes[k]
        xt = t * x1 + math.sqrt(t * (1.0 - t)) * g
        post = posterior_batch(m, t, xt)
        gamma[k] = post.gamma[:1] if m.kind == "gaussian" else post.gamma
        drift[k] = post.drift

    _run(work, range(k_nodes), threads)
    return PathEnsemble(grid, n_paths, int(seed), "bridge", m.fingerprint(), d,
                        _finish_gamma(m, gamma, n_paths), drift, x1, noise=g)


def simulate_euler(m: Measure, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Euler-Maruyama integration of ``dX = v(t, X) dt + dB`` from ``X_0 = 0``.

    The last step, from ``1 - epsilon`` to 1, reuses the drift at ``1 - epsilon``.
    Path blocks of 4096 carry their own noise substreams.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    d = m.dim
    t = grid.nodes
    dt = np.append(np.diff(t), grid.epsilon)
    k_nodes = grid.size
    gamma = _gamma_store(m, k_nodes, n_paths)
    drift = np.empty((k_nodes, n_paths, d))
    states = np.empty((k_nodes, n_paths, d))
    terminal = np.empty((n_paths, d))
    starts = list(range(0, n_paths, BLOCK))

    def work(b):
        lo = starts[b]
        hi = min(lo + BLOCK, n_paths)
        rng = np.random.default_rng(derive_seed(seed, STREAM_EULER, b))
        x = np.zeros((hi - lo, d))
        for k in range(k_nodes):
            states[k, lo:hi] = x
            post = posterior_batch(m, t[k], x)
            v = post.drift
            if not np.all(np.isfinite(v)) or np.max(np.linalg.norm(v, axis=1)) > DRIFT_LIMIT:
                raise DriftBlowup(f"drift exceeded {DRIFT_LIMIT:g} at t={t[k]}")
            if m.kind == "gaussian":
                if b == 0:
                    gamma[k] = post.gamma[:1]
            else:
                gamma[k, lo:hi] = post.gamma
            drift[k, lo:hi] = v
            x = x + v * dt[k] + math.sqrt(dt[k]) * rng.standard_normal(x.shape)
        terminal[lo:hi] = x

    _run(work, range(len(starts)), threads)
    return PathEnsemble(grid, n_paths, int(seed), "euler", m.fingerprint(), d,
                        _finish_gamma(m, gamma, n_paths), drift, terminal, states=states)


def _block_normals(seed: int, stream: int, n: int, d: int) -> np.ndarray:
    out = np.empty((n, d))
    for b, lo in enumerate(range(0, n, BLOCK)):
        hi = min(lo + BLOCK, n)
        out[lo:hi] = np.random.default_rng(derive_seed(seed, stream, b)).standard_normal((hi - lo, d))
    return out


def _run(work, items, threads: int) -> None:
    items = list(items)
    if threads <= 1:
        for i in items:
            work(i)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, items))


# ----------------------------------------------------------------------
# moment curves
# ----------------------------------------------------------------------

def batch_means(values: np.ndarray, n_batches: int = N_BATCHES) -> tuple[np.ndarray, np.ndarray]:
    """Mean over axis 0 and its batch-means standard error (contiguous batches)."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    parts = np.array_split(values, n_batches, axis=0)
    bm = np.stack([p.mean(axis=0) for p in parts])
    stderr = bm.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return mean, stderr


def per_node_batch_means(values: np.ndarray, n_batches: int = N_BATCHES):
    """Like :func:`batch_means` for arrays shaped (K, n, ...), batching over paths."""
    values = np.asarray(values)
    mean = values.mean(axis=1)
    parts = np.array_split(np.arange(values.shape[1]), n_batches)
    bm = np.stack([values[:, p].mean(axis=1) for p in parts])
    stderr = bm.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return mean, stderr


@dataclass(eq=False)
class MomentCurve:
    """Per-node ensemble moments with batch-means standard errors.

    ``var_gamma`` is the matrix ``E[Gamma^2] - E[Gamma]^2``, whose trace is
    ``E |Gamma - E Gamma|_F^2``.
    """

    t: np.ndarray
    e_gamma: np.ndarray
    e_gamma2: np.ndarray
    var_gamma: np.ndarray
    e_vnorm2: np.ndarray
    e_vv: np.ndarray
    e_v: np.ndarray
    se_gamma: np.ndarray
    se_gamma2: np.ndarray
    se_vnorm2: np.ndarray
    se_vv: np.ndarray
    se_v: np.ndarray
    se_tr_var_gamma: np.ndarray
    grid: TimeGrid
    n_paths: int

    @property
    def dim(self) -> int:
        return self.e_gamma.shape[-1]


def moment_curve(e: PathEnsemble) -> MomentCurve:
    k_nodes, n, d = e.drift.shape
    g = e.gamma
    if g.strides[1] == 0:
        eg = np.array(g[:, 0])
        eg2 = eg @ eg
        zeros = np.zeros_like(eg)
        se_g, se_g2, se_trvar = zeros, zeros, np.zeros(k_nodes)
    else:
        eg, se_g = per_node_batch_means(g)
        g2 = g @ g
        eg2, se_g2 = per_node_batch_means(g2)
        centered = g - eg[:, None]
        _, se_trvar = per_node_batch_means(np.einsum("knij,knij->kn", centered, centered))
        del g2, centered
    v = e.drift
    vn, se_vn = per_node_batch_means(np.einsum("kni,kni->kn", v, v))
    vv, se_vv = per_node_batch_means(v[:, :, :, None] * v[:, :, None, :])
    ev, se_v = per_node_batch_means(v)
    return MomentCurve(
        t=e.grid.nodes.copy(), e_gamma=eg, e_gamma2=eg2, var_gamma=eg2 - eg @ eg,
        e_vnorm2=vn, e_vv=vv, e_v=ev, se_gamma=se_g, se_gamma2=se_g2, se_vnorm2=se_vn,
        se_vv=se_vv, se_v=se_v, se_tr_var_gamma=se_trvar, grid=e.grid, n_paths=n,
    )


def curve_to_csv(curve: MomentCurve, path) -> None:
    """Columns: t, EGamma_ij, VarGamma_ij, Evnorm2, then the matching stderr columns."""
    d = curve.dim
    idx = [(i, j) for i in range(d) for j in range(d)]
    header = (["t"] + [f"EGamma_{i}{j}" for i, j in idx] + [f"VarGamma_{i}{j}" for i, j in idx]
              + ["Evnorm2"] + [f"stderr_EGamma_{i}{j}" for i, j in idx] + ["stderr_Evnorm2"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(curve.t.size):
            row = ([curve.t[k]] + [curve.e_gamma[k, i, j] for i, j in idx]
                   + [curve.var_gamma[k, i, j] for i, j in idx] + [curve.e_vnorm2[k]]
                   + [curve.se_gamma[k, i, j] for i, j in idx] + [curve.se_vnorm2[k]])
            w.writerow([repr(float(v)) for v in row])


def check_same_grid(*ensembles: PathEnsemble) -> None:
    first = ensembles[0]
    for e in ensembles[1:]:
        if not first.grid.same_as(e.grid):
            raise GridMismatch("ensembles live on different time grids")
        if e.n_paths != first.n_paths:
            raise GridMismatch("ensembles have different path counts")


# ----------------------------------------------------------------------
# cache
# ----------------------------------------------------------------------

def ensemble_key(m: Measure, grid: TimeGrid, n_paths: int, seed: int, method: str) -> str:
    blob = json.dumps({
        "measure": m.fingerprint(), "nodes": grid.nodes.tolist(), "epsilon": grid.epsilon,
        "scheme": grid.scheme, "n_paths": int(n_paths), "seed": int(seed), "method": method,
        "version": __version__,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_ensemble(e: PathEnsemble, path) -> None:
    compact = e.gamma.strides[1] == 0
    arrays = {
        "nodes": e.grid.nodes, "gamma": e.gamma[:, :1] if compact else e.gamma,
        "drift": e.drift, "terminal": e.terminal,
        "meta": np.array(json.dumps({
            "epsilon": e.grid.epsilon, "scheme": e.grid.scheme, "rho": e.grid.rho,
            "n_paths": e.n_paths, "seed": e.seed, "method": e.method,
            "fingerprint": e.fingerprint, "dim": e.dim, "compact": compact,
        })),
    }
    if e.noise is not None:
        arrays["noise"] = e.noise
    if e.states is not None:
        arrays["states"] = e.states
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_ensemble(path) -> PathEnsemble:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        grid = TimeGrid(z["nodes"], meta["epsilon"], meta["scheme"], meta["rho"])
        gamma = z["gamma"]
        if meta["compact"]:
            gamma = np.broadcast_to(gamma, (gamma.shape[0], meta["n_paths"]) + gamma.shape[2:])
        return PathEnsemble(
            grid, meta["n_paths"], meta["seed"], meta["method"], meta["fingerprint"], meta["dim"],
            gamma, z["drift"], z["terminal"],
            noise=z["noise"] if "noise" in z else None,
            states=z["states"] if "states" in z else None,
        )
