import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddmvc.clustering import kl_divergence, kmeans, predict, sharpen, student_t_assign, student_t_grads
from feddmvc.errors import DegenerateRowError, InsufficientPointsError
from feddmvc.numerics import RngStream


def brute_force_kmeans(Z, K):
    """Minimum within-cluster sum of squares over every labelling using all K clusters."""
    best = np.inf
    for labels in itertools.product(range(K), repeat=len(Z)):
        labels = np.array(labels)
        if len(set(labels)) < K:
            continue
        cost = sum(((Z[labels == j] - Z[labels == j].mean(0)) ** 2).sum() for j in range(K))
        best = min(best, cost)
    return best


def test_kmeans_separated_pairs():
    Z = np.array([[0.0], [0.0], [10.0], [10.0]])
    res = kmeans(Z, 2, RngStream(0))
    assert sorted(res.centroids.ravel()) == [0.0, 10.0]
    assert res.trace[-1] == 0.0


def test_kmeans_k_equals_n():
    Z = np.random.default_rng(0).normal(size=(5, 2))
    res = kmeans(Z, 5, RngStream(1))
    assert res.trace[-1] == pytest.approx(0.0, abs=1e-12)
    assert sorted(res.labels.tolist()) == [0, 1, 2, 3, 4]


def test_kmeans_insufficient_points():
    with pytest.raises(InsufficientPointsError):
        kmeans(np.zeros((2, 3)), 3, RngStream(0))


@pytest.mark.parametrize("seed", range(6))
def test_kmeans_matches_brute_force_on_tiny_instances(seed):
    rng = np.random.default_rng(seed)
    n, K = int(rng.integers(4, 9)), int(rng.integers(2, 4))
    Z = rng.normal(size=(n, 2)) + rng.integers(0, 3, size=(n, 1)) * 4.0
    res = kmeans(Z, K, RngStream(seed), n_init=20)
    assert res.trace[-1] == pytest.approx(brute_force_kmeans(Z, K), rel=1e-9, abs=1e-12)


def test_kmeans_deterministic_and_owns_points():
    Z = np.random.default_rng(3).normal(size=(60, 3))
    a = kmeans(Z, 5, RngStream(7))
    b = kmeans(Z, 5, RngStream(7))
    assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(a.labels, b.labels)
    assert np.all(np.bincount(a.labels, minlength=5) >= 1)


def test_kmeans_duplicate_points_still_fill_every_cluster():
    Z = np.array([[1.0, 1.0]] * 6 + [[2.0, 2.0]])
    res = kmeans(Z, 3, RngStream(0))
    assert np.all(np.bincount(res.labels, minlength=3) >= 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(6, 40))
def test_kmeans_trace_non_increasing(seed, K, n):
    Z = np.random.default_rng(seed).normal(size=(n, 3))
    res = kmeans(Z, K, RngStream(seed))
    assert np.all(np.diff(res.trace) <= 0)


def test_student_t_single_cluster():
    Q = student_t_assign(np.random.default_rng(0).normal(size=(4, 2)), np.zeros((1, 2)))
    assert np.all(Q == 1.0)


def test_student_t_closed_form():
    Q = student_t_assign([[0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(Q, [[2 / 3, 1 / 3]], rtol=1e-15)


def test_student_t_matches_formula():
    rng = np.random.default_rng(1)
    Z, U = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    Q = student_t_assign(Z, U)
    for i in range(6):
        k = [1.0 / (1.0 + sum((Z[i, l] - U[j, l]) ** 2 for l in range(3))) for j in range(4)]
        np.testing.assert_allclose(Q[i], np.array(k) / sum(k), rtol=1e-12)
    np.testing.assert_allclose(Q.sum(1), 1.0, atol=1e-9)


def test_student_t_closer_means_larger():
    U = np.array([[0.0, 0.0], [3.0, 1.0], [-2.0, 2.0]])
    z = np.array([[2.0, 2.0]])
    q0 = student_t_assign(z, U)[0, 0]
    q1 = student_t_assign(z * 0.5, U)[0, 0]
    assert q1 > q0


def test_student_t_grads_finite_differences():
    rng = np.random.default_rng(4)
    Z, U = rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
    P = sharpen(rng.random((5, 3)) + 0.1)
    _, dZ, dU = student_t_grads(Z, U, P)
    h = 1e-6
    for arr, grad, which in ((Z, dZ, 0), (U, dU, 1)):
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            args_p = (plus, U) if which == 0 else (Z, plus)
            args_m = (minus, U) if which == 0 else (Z, minus)
            fd = (kl_divergence(P, student_t_assign(*args_p)) - kl_divergence(P, student_t_assign(*args_m))) / (2 * h)
            assert fd == pytest.approx(grad[idx], rel=1e-5, abs=1e-8)


def test_sharpen_examples():
    np.testing.assert_allclose(sharpen([[0.5, 0.5]]), [[0.5, 0.5]])
    np.testing.assert_allclose(sharpen([[0.8, 0.2]]), [[0.64 / 0.68, 0.04 / 0.68]], rtol=1e-14)
    with pytest.raises(DegenerateRowError):
        sharpen([[0.0, 0.0]])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=2, max_size=6).filter(lambda r: sum(r) > 1e-3))
def test_sharpen_monotone(row):
    s = np.array([row]) / sum(row)
    p = sharpen(s)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    top = s[0].max()
    assert set(np.flatnonzero(p[0] == p[0].max())) == set(np.flatnonzero(s[0] == top))
    assert p[0].max() >= top - 1e-12
    support = s[0] > 0
    if np.allclose(s[0][support], s[0][support][0]):
        assert p[0].max() == pytest.approx(top)
    else:
        assert p[0].max() > top


def test_predict_argmax_and_ties():
    assert predict([[0.9, 0.1]]).tolist() == [0]
    assert predict([[0.5, 0.5]]).tolist() == [0]
    P = np.random.default_rng(2).random((30, 4))
    naive = []
    for row in P:
        best = 0
        for j in range(1, 4):
            if row[j] > row[best]:
                best = j
        naive.append(best)
    assert predict(P).tolist() == naive


def test_kl_divergence():
    assert kl_divergence([[0.3, 0.7]], [[0.3, 0.7]]) == 0.0
    assert kl_divergence([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(np.log(2))
