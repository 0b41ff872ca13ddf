"""Batched symmetric-matrix functions via eigendecomposition."""
from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite

EIG_FLOOR = 1e-12


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_apply(a: np.ndarray, func, floor: float = 0.0) -> np.ndarray:
    """Apply ``func`` to the spectrum of each symmetric matrix in ``a`` (shape (..., d, d)).

    Eigenvalues are clamped below at ``floor * max(lambda_max, 0)``.
    """
    w, q = np.linalg.eigh(symmetrize(a))
    top = np.maximum(w[..., -1:], 0.0)
    w = np.maximum(w, floor * top)
    return (q * func(w)[..., None, :]) @ np.swapaxes(q, -1, -2)


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    return sym_apply(a, np.sqrt, floor=0.0)


def sym_inv(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse of symmetric PSD matrices with a relative eigenvalue floor.

    Eigenvalues below ``floor * lambda_max`` are dropped (pseudo-inverse),
    which is what near-singular samples close to t = 1 need.
    """
    w, q = np.linalg.eigh(symmetrize(a))
    top = np.maximum(w[..., -1:], 0.0)
    keep = w > floor * top
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (q * inv[..., None, :]) @ np.swapaxes(q, -1, -2)


def sym_inv_sqrt(a: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(symmetrize(a))
    if np.any(w <= 0):
        raise NotPositiveDefinite("matrix has a non-positive eigenvalue")
    return (q * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(q, -1, -2)


def min_eig(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(symmetrize(a))[..., 0]


def max_eig(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(symmetrize(a))[..., -1]


def require_spd(a: np.ndarray, name: str = "matrix", tol: float = 0.0) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    if min_eig(a) <= tol:
        raise NotPositiveDefinite(f"{name} is not positive definite")
    return symmetrize(a)


def gaussian_kl(cov_p: np.ndarray, cov_q: np.ndarray) -> float:
    """D(N(0, cov_p) || N(0, cov_q)) in nats."""
    cov_p = np.atleast_2d(cov_p)
    cov_q = np.atleast_2d(cov_q)
    d = cov_p.shape[0]
    q_inv = np.linalg.inv(cov_q)
    _, logdet_p = np.linalg.slogdet(cov_p)
    _, logdet_q = np.linalg.slogdet(cov_q)
    return 0.5 * (np.trace(q_inv @ cov_p) - d + logdet_q - logdet_p)


def gaussian_w2_squared(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Squared 2-Wasserstein distance between centered Gaussians."""
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    rb = sym_sqrt(cov_b)
    cross = sym_sqrt(rb @ cov_a @ rb)
    return float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
