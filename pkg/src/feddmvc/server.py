"""Server stage: alignment, aggregation, prototype extraction, imputation, pseudo-labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .alignment import align_all
from .clustering import kmeans, predict, sharpen, student_t_assign
from .errors import ContractError, IndicatorError, NoOverlapError, OrderingError
from .numerics import RngStream, as_matrix, pairwise_sqdist, solve_ridge

log = logging.getLogger(__name__)

EXTENSION_MODES = ("full", "no-patterns", "none")


@dataclass(frozen=True)
class ServerConfig:
    n_clusters: int
    ridge_eps: float = 1e-6
    extension_iters: int = 1
    extension: str = "full"
    pattern_solver: str = "ridge"
    pattern_lr: float = 1e-3
    anchor: int = 0
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    kmeans_n_init: int = 10

    def __post_init__(self):
        if self.extension not in EXTENSION_MODES:
            raise ContractError(f"extension must be one of {EXTENSION_MODES}")
        if self.pattern_solver not in ("ridge", "gd"):
            raise ContractError("pattern_solver must be 'ridge' or 'gd'")
        if self.extension_iters < 1:
            raise ContractError("extension_iters must be >= 1")
        if self.ridge_eps < 0:
            raise ContractError("ridge_eps must be >= 0")


@dataclass(frozen=True)
class GlobalFeatures:
    """Concatenated embeddings; ``H[i, m]`` tells whether block ``(i, m)`` was observed.

    Unobserved blocks hold zeros until :func:`impute` fills them.
    """

    Z: np.ndarray
    view_dims: Tuple[int, ...]
    H: np.ndarray
    filled: bool = False

    @property
    def spans(self) -> List[slice]:
        edges = np.concatenate([[0], np.cumsum(self.view_dims)]).astype(int)
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    @property
    def complete(self) -> np.ndarray:
        return self.H.all(axis=1)

    def block(self, m: int) -> np.ndarray:
        return self.Z[:, self.spans[m]]


@dataclass(frozen=True)
class Broadcast:
    C: np.ndarray
    P: np.ndarray
    ids: np.ndarray
    view_dims: Tuple[int, ...]


def global_index(uploads) -> np.ndarray:
    return np.unique(np.concatenate([np.asarray(u.ids) for u in uploads]))


def indicator(uploads, global_ids) -> np.ndarray:
    """Boolean ``N x M`` availability matrix."""
    global_ids = np.asarray(global_ids)
    H = np.zeros((global_ids.size, len(uploads)), dtype=bool)
    for m, u in enumerate(uploads):
        H[np.searchsorted(global_ids, u.ids), m] = True
    missing = np.flatnonzero(~H.any(axis=1))
    if missing.size:
        raise IndicatorError(f"sample id {int(global_ids[missing[0]])} is absent from every view")
    return H


def _rows(global_ids, ids) -> np.ndarray:
    pos = np.searchsorted(global_ids, ids)
    if np.any(pos >= global_ids.size) or np.any(global_ids[np.minimum(pos, global_ids.size - 1)] != ids):
        raise ContractError("upload contains ids outside the global index")
    return pos


def aggregate(aligned_Q: Sequence[np.ndarray], ids: Sequence[np.ndarray], global_ids) -> np.ndarray:
    """Average the aligned assignments over the views in which each sample is present."""
    global_ids = np.asarray(global_ids)
    K = aligned_Q[0].shape[1]
    total = np.zeros((global_ids.size, K))
    count = np.zeros(global_ids.size)
    for Q, i in zip(aligned_Q, ids):
        r = _rows(global_ids, np.asarray(i))
        total[r] += Q
        count[r] += 1
    missing = np.flatnonzero(count == 0)
    if missing.size:
        raise IndicatorError(f"sample id {int(global_ids[missing[0]])} is absent from every upload")
    return total / count[:, None]


def concat_features(uploads, global_ids) -> GlobalFeatures:
    global_ids = np.asarray(global_ids)
    dims = tuple(int(u.Z.shape[1]) for u in uploads)
    Z = np.zeros((global_ids.size, sum(dims)))
    H = np.zeros((global_ids.size, len(uploads)), dtype=bool)
    start = 0
    for m, (u, d) in enumerate(zip(uploads, dims)):
        ids = np.asarray(u.ids)
        if np.unique(ids).size != ids.size:
            raise ContractError(f"duplicate sample id in view {m}")
        r = _rows(global_ids, ids)
        Z[r, start : start + d] = u.Z
        H[r, m] = True
        start += d
    if not H.any(axis=1).all():
        raise IndicatorError("a sample is absent from every view")
    return GlobalFeatures(Z, dims, H, filled=bool(H.all()))


def compute_prototypes(Zc, Qc, K: int) -> np.ndarray:
    """Per-cluster means of complete rows grouped by the argmax of their assignment.

    An empty cluster takes the complete row farthest from its own cluster's
    prototype.
    """
    Zc = as_matrix(Zc, "Zc")
    if Zc.shape[0] == 0:
        raise NoOverlapError("no sample is present in every view; global prototypes are undefined")
    if K < 1:
        raise ContractError("K must be >= 1")
    labels = np.argmax(np.asarray(Qc), axis=1)
    counts = np.bincount(labels, minlength=K)
    C = np.zeros((K, Zc.shape[1]))
    np.add.at(C, labels, Zc)
    nz = counts > 0
    C[nz] /= counts[nz, None]
    empty = np.flatnonzero(~nz)
    if empty.size:
        own = ((Zc - C[labels]) ** 2).sum(axis=1)
        taken = np.zeros(Zc.shape[0], dtype=bool)
        for j in empty:
            i = int(np.argmax(np.where(taken, -1.0, own)))
            taken[i] = True
            C[j] = Zc[i]
    return C


def view_design(Qc, C, view_dims, m: int) -> np.ndarray:
    """Rows ``q_i C^m``: each sample's prototype mixture within view ``m``."""
    start = int(sum(view_dims[:m]))
    return np.asarray(Qc) @ np.asarray(C)[:, start : start + view_dims[m]]


def fit_view_patterns(
    Zc,
    Qc,
    C,
    view_dims,
    eps: float = 1e-6,
    solver: str = "ridge",
    iters: int = 1,
    lr: float = 1e-3,
) -> List[np.ndarray]:
    """Per-view linear maps ``W^m`` with ``z_i^m ~ (q_i C^m) W^m`` on complete rows."""
    Zc = as_matrix(Zc, "Zc")
    if Zc.shape[0] == 0:
        raise NoOverlapError("view patterns need at least one complete sample")
    Ws = []
    start = 0
    for m, d in enumerate(view_dims):
        Xd = view_design(Qc, C, view_dims, m)
        Y = Zc[:, start : start + d]
        if solver == "ridge":
            W = solve_ridge(Xd, Y, eps)
        else:
            W = np.eye(d)
            G = Xd.T @ Xd
            R = Xd.T @ Y
            for _ in range(iters):
                W = W - lr * 2.0 * (G @ W - R + eps * W)
        Ws.append(W)
        start += d
    return Ws


def pattern_residuals(Zc, Qc, C, Ws, view_dims) -> List[float]:
    out = []
    start = 0
    for m, (W, d) in enumerate(zip(Ws, view_dims)):
        pred = view_design(Qc, C, view_dims, m) @ W
        out.append(float(np.sqrt(np.mean((Zc[:, start : start + d] - pred) ** 2))) if len(Zc) else 0.0)
        start += d
    return out


def impute(Q, C, Ws: Optional[Sequence[np.ndarray]], feats: GlobalFeatures) -> GlobalFeatures:
    """Fill every unobserved block with ``(q_i C^m) W^m``; observed blocks are untouched.

    Pass ``Ws=[None] * M`` to impute with the prototype mixture ``q_i C^m`` alone.
    """
    if Ws is None:
        raise OrderingError("view patterns must be fitted before imputation")
    if len(Ws) != len(feats.view_dims):
        raise ContractError("one pattern per view required")
    Z = feats.Z.copy()
    for m, sl in enumerate(feats.spans):
        miss = np.flatnonzero(~feats.H[:, m])
        if miss.size == 0:
            continue
        block = view_design(np.asarray(Q)[miss], C, feats.view_dims, m)
        if Ws[m] is not None:
            block = block @ Ws[m]
        Z[miss, sl] = block
    return GlobalFeatures(Z, feats.view_dims, feats.H, filled=True)


@dataclass(frozen=True)
class PseudoLabels:
    centroids: np.ndarray
    S: np.ndarray
    P: np.ndarray
    labels: np.ndarray
    objective: float


def global_pseudo_labels(
    Z, K: int, rng: RngStream, max_iter: int = 300, tol: float = 1e-6, n_init: int = 10
) -> PseudoLabels:
    if isinstance(Z, GlobalFeatures):
        if not Z.filled:
            raise OrderingError("global features still have unfilled blocks")
        Z = Z.Z
    km = kmeans(Z, K, rng, max_iter, tol, n_init)
    S = student_t_assign(Z, km.centroids)
    P = sharpen(S)
    return PseudoLabels(km.centroids, S, P, predict(P), float(km.trace[-1]))


def _entropy(Q) -> float:
    Q = np.clip(Q, 1e-300, None)
    return float(-(Q * np.log(Q)).sum(axis=1).mean())


def server_epoch(uploads, config: ServerConfig, rng: RngStream, global_ids=None):
    """One server round over a full set of client uploads.

    Returns ``(broadcast, labels, diagnostics)``. Nothing is published unless
    every stage succeeds.
    """
    if not uploads:
        raise ContractError("no uploads received")
    uploads = sorted(uploads, key=lambda u: u.view)
    if [u.view for u in uploads] != list(range(len(uploads))):
        raise ContractError("expected exactly one upload per view 0..M-1")
    K = config.n_clusters
    if global_ids is None:
        global_ids = global_index(uploads)
    global_ids = np.asarray(global_ids)
    indicator(uploads, global_ids)

    aligned, perms = align_all([u.Q for u in uploads], [u.ids for u in uploads], anchor=config.anchor)
    Q = aggregate(aligned, [u.ids for u in uploads], global_ids)
    feats = concat_features(uploads, global_ids)
    comp = feats.complete
    Zc, Qc = feats.Z[comp], Q[comp]
    C = compute_prototypes(Zc, Qc, K)
    diag: Dict[str, object] = {
        "n_samples": int(global_ids.size),
        "n_complete": int(comp.sum()),
        "imputation_fraction": float((~feats.H).mean()),
        "assignment_entropy": _entropy(Q),
        "permutations": [np.argmax(A, axis=1).tolist() for A in perms],
    }

    if config.extension == "none":
        # raw aggregated assignments stand in for the clustering of global features
        P = sharpen(Q)
        labels = predict(P)
        diag.update(pattern_residuals=[], kmeans_objective=None)
    else:
        if config.extension == "full":
            Ws = fit_view_patterns(
                Zc, Qc, C, feats.view_dims, config.ridge_eps,
                config.pattern_solver, config.extension_iters, config.pattern_lr,
            )
            diag["pattern_residuals"] = pattern_residuals(Zc, Qc, C, Ws, feats.view_dims)
        else:
            Ws = [None] * len(uploads)
            diag["pattern_residuals"] = []
        filled = impute(Q, C, Ws, feats)
        pl = global_pseudo_labels(
            filled, K, rng, config.kmeans_max_iter, config.kmeans_tol, config.kmeans_n_init
        )
        P, labels = pl.P, pl.labels
        diag["kmeans_objective"] = pl.objective
    return Broadcast(C=C, P=P, ids=global_ids, view_dims=feats.view_dims), labels, diag
