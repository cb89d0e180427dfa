import itertools

import numpy as np
import pytest

from feddmvc.alignment import (
    align_all,
    apply_permutation,
    confusion,
    cost_from_confusion,
    hungarian,
    permutation_cost,
)
from feddmvc.errors import AlignmentError, ContractError


def brute_min(M):
    K = len(M)
    return min(sum(M[i, p[i]] for i in range(K)) for p in itertools.permutations(range(K)))


def test_confusion_examples():
    assert confusion([0, 1], [0, 1], 2).tolist() == [[1, 0], [0, 1]]
    assert confusion([1, 1, 0, 0], [0, 0, 1, 1], 2).tolist() == [[0, 2], [2, 0]]


def test_confusion_matches_loop():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    naive = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            naive[i, j] = sum(1 for n in range(50) if a[n] == i and b[n] == j)
    assert np.array_equal(confusion(a, b, 4), naive)


def test_confusion_out_of_range():
    with pytest.raises(ContractError):
        confusion([0, 2], [0, 1], 2)


def test_cost_from_confusion():
    assert cost_from_confusion([[0, 2], [2, 0]]).tolist() == [[2, 0], [0, 2]]
    assert np.all(cost_from_confusion(np.full((3, 3), 4.0)) == 0)
    m = np.random.default_rng(1).integers(0, 10, (4, 4)).astype(float)
    c = cost_from_confusion(m)
    for i in range(4):
        for j in range(4):
            assert c[i, j] == m.max() - m[i, j]


def test_hungarian_small():
    assert np.array_equal(hungarian([[0, 1], [1, 0]]), np.eye(2, dtype=bool))
    assert np.array_equal(hungarian([[1, 0], [0, 1]]), ~np.eye(2, dtype=bool))
    with pytest.raises(ContractError):
        hungarian(np.zeros((2, 3)))


def test_hungarian_lexicographic_tie_break():
    # every permutation is optimal: identity is the lexicographically smallest
    assert np.array_equal(hungarian(np.zeros((4, 4))), np.eye(4, dtype=bool))
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    # optima: (1,2,0) and (2,0,1); first is smaller
    assert np.argmax(hungarian(M), axis=1).tolist() == [1, 2, 0]


@pytest.mark.parametrize("seed", range(20))
def test_hungarian_is_optimal(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 7))
    M = rng.random((K, K)) if seed % 2 else rng.integers(0, 5, (K, K)).astype(float)
    A = hungarian(M)
    assert np.array_equal(A.astype(int) @ A.T.astype(int), np.eye(K, dtype=int))
    assert permutation_cost(M, A) == pytest.approx(brute_min(M), abs=1e-12)


def test_apply_permutation_preserves_row_sums():
    Q = np.random.default_rng(2).dirichlet(np.ones(4), size=10)
    A = hungarian(np.random.default_rng(3).random((4, 4)))
    np.testing.assert_allclose(apply_permutation(Q, A).sum(1), Q.sum(1), rtol=1e-15)


def one_hot_soft(labels, K, rng):
    Q = rng.dirichlet(np.ones(K) * 0.3, size=len(labels)) * 0.2
    Q[np.arange(len(labels)), labels] += 0.8
    return Q / Q.sum(1, keepdims=True)


def test_align_single_client_identity():
    Q = np.random.default_rng(0).dirichlet(np.ones(3), size=5)
    aligned, perms = align_all([Q], [np.arange(5)])
    assert np.array_equal(aligned[0], Q)
    assert np.array_equal(perms[0], np.eye(3, dtype=bool))


def test_align_recovers_planted_permutation():
    rng = np.random.default_rng(4)
    K = 5
    anchor = rng.integers(0, K, 80)
    pi = rng.permutation(K)
    client = pi[anchor]
    Qa, Qc = one_hot_soft(anchor, K, rng), one_hot_soft(client, K, rng)
    aligned, perms = align_all([Qa, Qc], [np.arange(80), np.arange(80)])
    assert np.array_equal(aligned[0], Qa)
    assert np.array_equal(np.argmax(aligned[1], axis=1), anchor)


def test_align_uses_only_shared_ids():
    rng = np.random.default_rng(5)
    K = 3
    ids_a = np.arange(0, 60)
    ids_c = np.arange(30, 90)
    truth = rng.integers(0, K, 90)
    pi = np.array([2, 0, 1])
    Qa = one_hot_soft(truth[ids_a], K, rng)
    Qc = one_hot_soft(pi[truth[ids_c]], K, rng)
    aligned, _ = align_all([Qa, Qc], [ids_a, ids_c])
    assert np.array_equal(np.argmax(aligned[1], axis=1), truth[ids_c])


def test_align_without_overlap_fails():
    Q = np.full((3, 2), 0.5)
    with pytest.raises(AlignmentError):
        align_all([Q, Q], [np.arange(3), np.arange(3, 6)])
