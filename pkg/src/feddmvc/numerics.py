"""Dense float64 kernels and deterministic random streams."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import ContractError, DegenerateRowError, SingularMatrixError

_MASK64 = (1 << 64) - 1


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError(f"{name} contains non-finite entries")
    return m


def pairwise_sqdist(A, B) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``A`` and ``B``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ContractError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    # per-pair differences rather than the expanded |a|^2+|b|^2-2ab form:
    # exact zeros on identical rows and exact symmetry
    return cdist(A, B, "sqeuclidean")


def solve_ridge(X, Y, eps: float = 1e-6) -> np.ndarray:
    """Return ``B = (X^T X + eps I)^{-1} X^T Y`` via Cholesky on the normal equations."""
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ContractError(f"row mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
    if eps < 0:
        raise ContractError(f"eps must be non-negative, got {eps}")
    p = X.shape[1]
    G = X.T @ X
    if eps:
        G[np.diag_indices(p)] += eps
    rhs = X.T @ Y
    try:
        cf = linalg.cho_factor(G, lower=True, check_finite=False)
    except linalg.LinAlgError:
        rank = np.linalg.matrix_rank(X)
        raise SingularMatrixError(
            f"normal matrix is singular: design has rank {rank} < {p} columns"
            + ("" if eps else "; use eps > 0")
        ) from None
    # Cholesky can succeed on a numerically singular matrix; catch that too
    diag = np.abs(np.diag(cf[0]))
    if eps == 0 and p and diag.min() <= np.sqrt(np.finfo(float).eps) * diag.max():
        rank = np.linalg.matrix_rank(X)
        raise SingularMatrixError(f"normal matrix is singular: design has rank {rank} < {p} columns")
    return linalg.cho_solve(cf, rhs, check_finite=False)


def row_normalize(M) -> np.ndarray:
    M = as_matrix(M)
    if np.any(M < 0):
        raise ContractError("row_normalize requires non-negative entries")
    s = M.sum(axis=1)
    bad = np.flatnonzero(s <= 0)
    if bad.size:
        raise DegenerateRowError(int(bad[0]))
    return M / s[:, None]


class RngStream:
    """Counter-based (Philox) random stream keyed by ``(seed, stream_id)``.

    Child streams are derived with :meth:`child`; two streams with the same key
    produce identical draws on every platform. A stream must have one owner.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self._gen = np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))

    def child(self, idx: int) -> "RngStream":
        mixed = np.random.SeedSequence([self.seed, self.stream_id, int(idx) & _MASK64, 0x5EED])
        return RngStream(self.seed, int(mixed.generate_state(1, np.uint64)[0]))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def dirichlet(self, alpha, size=None):
        return self._gen.dirichlet(alpha, size)

    def bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
