"""K-means, Student's t soft assignment, sharpening and hard prediction."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractError, DegenerateRowError, InsufficientPointsError
from .numerics import RngStream, as_matrix, pairwise_sqdist, row_normalize


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    labels: np.ndarray
    trace: np.ndarray


def kmeans_pp_init(Z: np.ndarray, K: int, rng: RngStream) -> np.ndarray:
    n = Z.shape[0]
    centers = [Z[int(rng.integers(n))]]
    d2 = pairwise_sqdist(Z, centers[0][None, :])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centre; any unused index will do
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(Z[idx])
        d2 = np.minimum(d2, pairwise_sqdist(Z, Z[idx][None, :])[:, 0])
    return np.array(centers)


def _repair_empty(Z, labels, centroids, d2):
    """Move each empty centroid onto the point farthest from its assigned centroid."""
    K = centroids.shape[0]
    counts = np.bincount(labels, minlength=K)
    own = d2[np.arange(len(labels)), labels].copy()
    for j in np.flatnonzero(counts == 0):
        # never steal the last member of another cluster
        donors = counts[labels] > 1
        cand = np.where(donors, own, -1.0)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
        own[i] = 0.0
        centroids[j] = Z[i]
    return labels, centroids


def _update(Z, labels, K):
    sums = np.zeros((K, Z.shape[1]))
    np.add.at(sums, labels, Z)
    counts = np.bincount(labels, minlength=K)
    return sums / counts[:, None]


def kmeans(
    Z, K: int, rng: RngStream, max_iter: int = 300, tol: float = 1e-6, n_init: int = 1
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Stops after ``max_iter`` iterations or once the relative objective decrease
    drops below ``tol``. Every returned centroid owns at least one point. With
    ``n_init > 1`` the restart with the lowest final objective wins (first on ties).
    """
    Z = as_matrix(Z, "Z")
    n = Z.shape[0]
    if K < 1:
        raise ContractError("K must be >= 1")
    if n_init < 1:
        raise ContractError("n_init must be >= 1")
    if n < K:
        raise InsufficientPointsError(f"need at least K={K} points, got {n}")
    if n_init == 1:
        return _lloyd(Z, K, rng, max_iter, tol)
    best = None
    for r in range(n_init):
        res = _lloyd(Z, K, rng.child(r), max_iter, tol)
        if best is None or res.trace[-1] < best.trace[-1]:
            best = res
    return best


def _lloyd(Z, K, rng, max_iter, tol) -> KMeansResult:
    n = Z.shape[0]
    C = kmeans_pp_init(Z, K, rng)
    d2 = pairwise_sqdist(Z, C)
    labels = np.argmin(d2, axis=1)
    labels, C = _repair_empty(Z, labels, C, d2)
    C = _update(Z, labels, K)
    d2 = pairwise_sqdist(Z, C)
    obj = float(d2[np.arange(n), labels].sum())
    trace = [obj]
    for _ in range(max_iter):
        new = np.argmin(d2, axis=1)
        # keep the current label on ties so the objective cannot increase
        keep = d2[np.arange(n), labels] <= d2[np.arange(n), new]
        new = np.where(keep, labels, new)
        new, C = _repair_empty(Z, new, C.copy(), d2)
        C_new = _update(Z, new, K)
        d2_new = pairwise_sqdist(Z, C_new)
        obj_new = float(d2_new[np.arange(n), new].sum())
        if obj_new > obj:
            # repair can only lower the objective in exact arithmetic; guard rounding
            break
        labels, C, d2 = new, C_new, d2_new
        decrease = obj - obj_new
        obj = obj_new
        trace.append(obj)
        if decrease <= tol * max(obj_new, np.finfo(float).tiny) or decrease == 0:
            break
    return KMeansResult(C, labels.astype(np.int64), np.asarray(trace))


def student_t_assign(Z, centers) -> np.ndarray:
    """Degree-one Student's t similarity, normalised per row."""
    kernel = 1.0 / (1.0 + pairwise_sqdist(Z, centers))
    return kernel / kernel.sum(axis=1, keepdims=True)


def student_t_grads(Z, centers, P):
    """Gradients of ``KL(P || Q)`` w.r.t. ``Z`` and ``centers``, Q the Student's t assignment.

    Returns ``(Q, dZ, dcenters)``.
    """
    diff = Z[:, None, :] - centers[None, :, :]
    kernel = 1.0 / (1.0 + (diff * diff).sum(-1))
    Q = kernel / kernel.sum(axis=1, keepdims=True)
    # dKL/d(z_i - u_j) = 2 (p_ij - q_ij) k_ij (z_i - u_j); rows of P need not sum to 1
    w = 2.0 * (P - Q * P.sum(axis=1, keepdims=True)) * kernel
    g = w[:, :, None] * diff
    return Q, g.sum(axis=1), -g.sum(axis=0)


def kl_divergence(P, Q) -> float:
    """``sum p log(p/q)`` with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ContractError(f"shape mismatch: {P.shape} vs {Q.shape}")
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def sharpen(S) -> np.ndarray:
    """Row-normalise, square, row-normalise."""
    S = as_matrix(S, "S")
    try:
        R = row_normalize(S)
    except DegenerateRowError as e:
        raise DegenerateRowError(e.row, f"cannot sharpen: row {e.row} is all zero") from None
    return row_normalize(R * R)


def predict(P) -> np.ndarray:
    """Row argmax; ties go to the lowest column index."""
    return np.argmax(as_matrix(P, "P"), axis=1).astype(np.int64)
