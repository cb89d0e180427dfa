"""External clustering metrics: ACC, NMI and ARI."""

from __future__ import annotations

import numpy as np

from .alignment import cost_from_confusion, hungarian
from .errors import ContractError


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.ndim != 1 or truth.ndim != 1:
        raise ContractError("labels must be 1-D")
    if pred.shape != truth.shape:
        raise ContractError(f"length mismatch: {pred.size} vs {truth.size}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    return p.ravel(), t.ravel()


def contingency(pred, truth) -> np.ndarray:
    p, t = _pair(pred, truth)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1))
    np.add.at(table, (p, t), 1.0)
    return table


def acc(pred, truth) -> float:
    """Best one-to-one cluster-to-class matching accuracy."""
    table = contingency(pred, truth)
    if table.size == 0:
        return 1.0
    k = max(table.shape)
    sq = np.zeros((k, k))
    sq[: table.shape[0], : table.shape[1]] = table
    A = hungarian(cost_from_confusion(sq))
    return float(sq[A].sum() / table.sum())


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = contingency(pred, truth)
    n = table.sum()
    if n == 0:
        return 1.0
    h_p = _entropy(table.sum(1))
    h_t = _entropy(table.sum(0))
    if h_p == 0.0 and h_t == 0.0:
        return 1.0
    if h_p == 0.0 or h_t == 0.0:
        return 0.0
    nz = table > 0
    outer = np.outer(table.sum(1), table.sum(0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(np.clip(mi / ((h_p + h_t) / 2.0), 0.0, 1.0))


def _comb2(x):
    return x * (x - 1) / 2.0


def ari(pred, truth) -> float:
    table = contingency(pred, truth)
    n = table.sum()
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(1)).sum()
    sum_cols = _comb2(table.sum(0)).sum()
    total = _comb2(n)
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def evaluate(pred, truth) -> dict:
    return {"acc": acc(pred, truth), "nmi": nmi(pred, truth), "ari": ari(pred, truth)}
