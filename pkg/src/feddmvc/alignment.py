"""Cross-client cluster index alignment by linear assignment."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AlignmentError, ContractError


def _labels(l, K, name):
    l = np.asarray(l)
    if l.ndim != 1:
        raise ContractError(f"{name} must be 1-D")
    if l.size and (l.min() < 0 or l.max() >= K):
        raise ContractError(f"{name} has labels outside [0, {K})")
    return l.astype(np.int64)


def confusion(l_m, l_anchor, K: int) -> np.ndarray:
    """``out[i, j]`` = number of samples labelled ``i`` by the client and ``j`` by the anchor."""
    a = _labels(l_m, K, "client labels")
    b = _labels(l_anchor, K, "anchor labels")
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    out = np.zeros((K, K))
    np.add.at(out, (a, b), 1.0)
    return out


def cost_from_confusion(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ContractError("confusion counts must be non-negative")
    return m.max() - m


def _optimal_cost(M: np.ndarray) -> float:
    r, c = linear_sum_assignment(M)
    return float(M[r, c].sum())


def hungarian(M) -> np.ndarray:
    """Minimum-cost permutation matrix for a square cost matrix.

    Among optimal permutations the lexicographically smallest (as a sequence of
    column indices per row) is returned.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"cost matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ContractError("cost matrix must be finite")
    K = M.shape[0]
    best = _optimal_cost(M)
    tol = 1e-9 * max(1.0, np.abs(M).sum())
    rows = list(range(K))
    cols = list(range(K))
    fixed = 0.0
    perm = np.empty(K, dtype=np.int64)
    # fix rows in order to the smallest column that still admits an optimum
    for i in range(K):
        rest_rows = rows[1:]
        for c in cols:
            rest_cols = [x for x in cols if x != c]
            rest = _optimal_cost(M[np.ix_(rest_rows, rest_cols)]) if rest_rows else 0.0
            if fixed + M[i, c] + rest <= best + tol:
                perm[i] = c
                fixed += M[i, c]
                cols = rest_cols
                break
        rows = rest_rows
    A = np.zeros((K, K), dtype=bool)
    A[np.arange(K), perm] = True
    return A


def permutation_cost(M, A) -> float:
    return float(np.asarray(M)[np.asarray(A, dtype=bool)].sum())


def apply_permutation(Q, A) -> np.ndarray:
    """``Q @ A``: column ``i`` of the client becomes column ``perm[i]`` of the anchor."""
    return np.asarray(Q, dtype=np.float64) @ np.asarray(A, dtype=np.float64)


def align_all(
    assignments: Sequence[np.ndarray],
    sample_ids: Sequence[Sequence[int]],
    anchor: int = 0,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Align every client's soft assignment to the anchor client's cluster order.

    ``sample_ids[m]`` lists the global ids of the rows of ``assignments[m]``;
    label agreement is counted only over ids shared with the anchor.
    Returns ``(aligned, permutations)``.
    """
    if not assignments:
        raise ContractError("need at least one client")
    if len(assignments) != len(sample_ids):
        raise ContractError("one id list per assignment matrix required")
    if not 0 <= anchor < len(assignments):
        raise ContractError(f"anchor index {anchor} out of range")
    K = np.asarray(assignments[anchor]).shape[1]
    anchor_ids = np.asarray(sample_ids[anchor])
    anchor_labels = np.argmax(assignments[anchor], axis=1)
    aligned, perms = [], []
    for m, (Q, ids) in enumerate(zip(assignments, sample_ids)):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.shape[1] != K:
            raise ContractError(f"client {m} has {Q.shape[1]} clusters, anchor has {K}")
        if m == anchor:
            A = np.eye(K, dtype=bool)
        else:
            ids = np.asarray(ids)
            common, i_m, i_a = np.intersect1d(ids, anchor_ids, assume_unique=True, return_indices=True)
            if common.size == 0:
                raise AlignmentError(f"client {m} shares no samples with anchor client {anchor}")
            conf = confusion(np.argmax(Q[i_m], axis=1), anchor_labels[i_a], K)
            A = hungarian(cost_from_confusion(conf))
        aligned.append(Q if m == anchor else apply_permutation(Q, A))
        perms.append(A)
    return aligned, perms
