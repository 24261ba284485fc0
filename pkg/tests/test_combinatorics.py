import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enlargekit.combinatorics import (
    INFINITY,
    all_permutations,
    apply_permutation,
    cap,
    cap_array,
    d_rho_holds,
    enumerate_injections,
    factorial_guard,
    fixing_permutations,
    inverse_permutation,
    partition_label,
    partition_labels,
    rank_and_sort,
    sorted_level_set_union,
    sorted_times,
)

times = st.one_of(st.integers(0, 4).map(float), st.just(INFINITY))


def test_cap_examples():
    assert cap(3, 5) == 3
    assert cap(7, 5) == INFINITY
    assert cap(4.0, 4.0) == 4.0
    assert cap(INFINITY, 2.0) == INFINITY
    assert cap(INFINITY, INFINITY) == INFINITY
    assert list(cap_array([1.0, 6.0], 5.0)) == [1.0, INFINITY]


def test_rank_examples():
    r = rank_and_sort([3, 1, 3])
    assert r.ranks == (2, 1, 3)
    assert r.sorted == (1, 3, 3)
    r = rank_and_sort([5, 2])
    assert r.ranks == (2, 1) and r.sorted == (2, 5)
    r = rank_and_sort([0.5, 1.5, 2.5])
    assert r.ranks == (1, 2, 3) and r.sorted == (0.5, 1.5, 2.5)


def _rank_by_sorting(a):
    """Independent rank: position in the list sorted by (value, index)."""
    order = sorted(range(len(a)), key=lambda i: (a[i], i))
    ranks = [0] * len(a)
    for pos, i in enumerate(order):
        ranks[i] = pos + 1
    return tuple(ranks)


@given(st.lists(times, min_size=1, max_size=7))
def test_rank_matches_lexicographic_sort(a):
    r = rank_and_sort(a)
    assert r.ranks == _rank_by_sorting(a)
    assert sorted(r.ranks) == list(range(1, len(a) + 1))
    assert all(r.sorted[r.ranks[i] - 1] == a[i] for i in range(len(a)))
    assert list(r.sorted) == sorted(a)
    # re-ranking the sorted output gives the identity
    assert rank_and_sort(list(r.sorted)).ranks == tuple(range(1, len(a) + 1))
    assert tuple(sorted_times(np.array(a))) == r.sorted


def test_level_set_identity_randomized_tied():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        a = [float(v) if v < 5 else INFINITY for v in rng.integers(0, 6, size=k)]
        s = rank_and_sort(a).sorted
        for j in range(1, k + 1):
            for t in set(a):
                assert (s[j - 1] <= t) == sorted_level_set_union(a, j, t)


def test_enumerate_injections():
    assert enumerate_injections(1, 2) == [(1,), (2,)]
    assert enumerate_injections(2, 2) == [(1, 2), (2, 1)]
    inj = enumerate_injections(2, 3)
    assert inj == [(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)]
    assert len(enumerate_injections(3, 5)) == math.perm(5, 3)
    with pytest.raises(ValueError):
        enumerate_injections(3, 2)
    with pytest.raises(ValueError):
        enumerate_injections(0, 2)


def test_partition_label_examples():
    assert partition_label([1.0, 2.0], 2) == (1, 2)
    assert partition_label([2.0, 2.0], 2) == (1, 2)
    assert partition_label([5.0, 1.0, 3.0], 2) == (2, 3)
    assert partition_label([INFINITY, INFINITY, 1.0], 1) == (3,)


@given(st.lists(times, min_size=1, max_size=4), st.data())
def test_partition_label_total_and_first(tau, data):
    n = len(tau)
    k = data.draw(st.integers(1, n))
    label = partition_label(tau, k)
    holds = [rho for rho in enumerate_injections(k, n) if d_rho_holds(tau, rho)]
    assert holds and label == holds[0]
    assert d_rho_holds(tau, label)
    idx = int(partition_labels(np.array([tau]), k)[0])
    assert enumerate_injections(k, n)[idx] == label


def test_partition_labels_exact_on_ties():
    rng = np.random.default_rng(3)
    tau = rng.integers(0, 3, size=(10_000, 3)).astype(float)
    tau[rng.random(tau.shape) < 0.1] = INFINITY
    for k in (1, 2, 3):
        lab = partition_labels(tau, k)
        inj = enumerate_injections(k, 3)
        for row, l in zip(tau[:300], lab[:300]):
            assert inj[l] == partition_label(list(row), k)


def test_fixing_permutations():
    assert fixing_permutations((1, 2), 2) == [(1, 2)]
    assert fixing_permutations((2,), 2) == [(2, 1)]
    assert len(fixing_permutations((1,), 3)) == 2
    for rho in enumerate_injections(2, 4):
        perms = fixing_permutations(rho, 4)
        assert len(perms) == math.factorial(2)
        for pi in perms:
            assert sorted(pi) == [1, 2, 3, 4]
            assert all(pi[r - 1] == i for i, r in enumerate(rho, start=1))
    with pytest.raises(ValueError):
        fixing_permutations((1, 1), 3)


def test_fixing_classes_partition_symmetric_group():
    for n, k in [(3, 1), (3, 2), (4, 2)]:
        classes = [set(fixing_permutations(rho, n)) for rho in enumerate_injections(k, n)]
        union = set().union(*classes)
        assert union == set(all_permutations(n))
        assert sum(len(c) for c in classes) == math.factorial(n)


def test_permutation_helpers():
    for pi in itertools.permutations(range(1, 5)):
        inv = inverse_permutation(pi)
        x = np.array([10.0, 20.0, 30.0, 40.0])
        assert np.array_equal(apply_permutation(inv, apply_permutation(pi, x)), x)
    assert list(apply_permutation((2, 1, 3), [7, 8, 9])) == [8, 7, 9]
    factorial_guard(6)
    with pytest.raises(ValueError):
        factorial_guard(7)
