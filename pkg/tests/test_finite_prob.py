import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enlargekit.finite_prob import (
    AdaptedPath,
    FiniteProbSpace,
    FiniteSpaceError,
    Partition,
    PartitionFiltration,
    conditional_expectation,
    doob_decomposition,
    dual_predictable_projection,
    filtration_from_keys,
    is_martingale,
    martingale_deviation,
    martingale_from_terminal,
    optional_projection,
    predictable_bracket,
    predictable_projection,
)


def random_walk(steps: int):
    """All ``2**steps`` equally likely +-1 paths with their natural filtration."""
    paths = np.array(list(itertools.product([-1.0, 1.0], repeat=steps)))
    space = FiniteProbSpace(np.full(len(paths), 1.0 / len(paths)))
    keys = [[paths[:, m] for m in range(j)] for j in range(steps + 1)]
    F = filtration_from_keys(space, keys)
    walk = np.vstack([np.zeros(len(paths)), np.cumsum(paths, axis=1).T])
    return space, F, walk, paths


def brute_conditional(x, blocks, prob):
    """Block averages computed with plain Python loops."""
    out = [0.0] * len(x)
    for block in blocks:
        mass = sum(prob[i] for i in block)
        avg = sum(prob[i] * x[i] for i in block) / mass
        for i in block:
            out[i] = avg
    return out


def test_conditional_expectation_examples():
    space = FiniteProbSpace(np.full(4, 0.25))
    x = np.array([1.0, 3.0, 2.0, 6.0])
    P = Partition.from_blocks([[0, 1], [2, 3]], 4)
    assert np.array_equal(conditional_expectation(x, P, space), [2, 2, 4, 4])
    assert np.array_equal(conditional_expectation(x, Partition.discrete(4), space), x)
    assert np.array_equal(conditional_expectation(x, Partition.trivial(4), space), [3, 3, 3, 3])


def test_space_validation():
    with pytest.raises(FiniteSpaceError):
        FiniteProbSpace(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(FiniteSpaceError):
        FiniteProbSpace(np.array([0.5, 0.6]))
    space = FiniteProbSpace(np.full(2, 0.5))
    with pytest.raises(FiniteSpaceError):
        PartitionFiltration(space, (Partition.discrete(2), Partition.trivial(2)))


@st.composite
def space_and_partitions(draw):
    size = draw(st.integers(1, 12))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=size, max_size=size)))
    fine = np.array(draw(st.lists(st.integers(0, 5), min_size=size, max_size=size)))
    merge = np.array(draw(st.lists(st.integers(0, 2), min_size=6, max_size=6)))
    x = np.array(draw(st.lists(st.floats(-10, 10), min_size=size, max_size=size)))
    return FiniteProbSpace(w / w.sum()), Partition(fine), Partition(merge[fine]), x


@given(space_and_partitions())
def test_conditional_expectation_matches_loops_and_tower(args):
    space, fine, coarse, x = args
    assert fine.refines(coarse)
    got = conditional_expectation(x, fine, space)
    assert np.allclose(got, brute_conditional(x, fine.blocks, space.prob), atol=1e-12)
    tower = conditional_expectation(got, coarse, space)
    assert np.allclose(tower, conditional_expectation(x, coarse, space), atol=1e-12)
    assert fine.is_measurable(got)


def test_doob_of_squared_walk():
    space, F, walk, _ = random_walk(4)
    mart, drift = doob_decomposition(walk**2, F)
    assert np.allclose(drift.values, np.arange(5)[:, None] * np.ones(16), atol=1e-14)
    assert martingale_deviation(mart, F) <= 1e-14
    assert np.allclose(mart.values + drift.values, walk**2)


def test_doob_trivial_cases():
    space, F, walk, _ = random_walk(3)
    _, drift = doob_decomposition(walk, F)
    assert np.allclose(drift.values, 0.0)
    increasing = np.cumsum(np.ones((4, 8)), axis=0) - 1.0
    mart, _ = doob_decomposition(increasing, F)
    assert np.allclose(mart.values, increasing[0])
    with pytest.raises(FiniteSpaceError):
        doob_decomposition(np.vstack([walk[:2], walk[3], walk[3]]), F)


def test_projections():
    space, F, walk, paths = random_walk(3)
    const = optional_projection(np.full(8, 2.5), F)
    assert np.allclose(const.values, 2.5)
    pred = predictable_projection(walk, F)
    assert np.allclose(pred.values[1:], walk[:-1])
    assert np.allclose(predictable_projection(np.full((4, 8), 1.0), F).values, 1.0)
    # the indicator of "first step up" is revealed at t_1
    ind = (paths[:, 0] > 0).astype(float)
    proj = optional_projection(ind, F)
    assert np.allclose(proj.values[0], 0.5)
    assert np.allclose(proj.values[1:], ind)


def test_dual_projection_duality_and_examples():
    space, F, walk, paths = random_walk(3)
    rng = np.random.default_rng(0)
    v = np.vstack([np.zeros(8), np.cumsum(rng.normal(size=(3, 8)), axis=0)])
    a = dual_predictable_projection(v, F)
    for j in range(1, 4):
        for block in F[j - 1].blocks:
            h = np.zeros(8)
            h[list(block)] = 1.0
            lhs = space.expect(h * (v[j] - v[j - 1]))
            rhs = space.expect(h * (a.values[j] - a.values[j - 1]))
            assert abs(lhs - rhs) <= 1e-13
    # already predictable: unchanged
    pred = np.vstack([np.zeros(8), np.cumsum(np.abs(walk[:-1]) + 1.0, axis=0)])
    assert np.allclose(dual_predictable_projection(pred, F).values, pred)
    # last-step jump independent of the past: deterministic compensator
    last = np.zeros((4, 8))
    last[3] = (paths[:, 2] > 0) * 3.0
    assert np.allclose(dual_predictable_projection(last, F).values[3], 1.5)
    with pytest.raises(FiniteSpaceError):
        dual_predictable_projection(np.ones((4, 8)), F)


def test_bracket():
    space, F, walk, paths = random_walk(4)
    br = predictable_bracket(walk, walk, F)
    assert np.allclose(br.values, np.arange(5)[:, None])
    # martingale driven by the first step only, one driven by the last only
    m1 = np.vstack([np.zeros(16), np.tile(paths[:, 0], (4, 1))])
    m2 = np.zeros((5, 16))
    m2[4] = paths[:, 3]
    assert np.allclose(predictable_bracket(m1, m2, F).values, 0.0)
    with pytest.raises(FiniteSpaceError):
        predictable_bracket(walk**2, walk, F)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bracket_properties_random(seed):
    space, F, walk, paths = random_walk(3)
    rng = np.random.default_rng(seed)
    m = martingale_from_terminal(rng.normal(size=8), F)
    n = martingale_from_terminal(rng.normal(size=8), F)
    assert is_martingale(m, F) and is_martingale(n, F)
    mm = predictable_bracket(m, m, F).values
    assert np.all(np.diff(mm, axis=0) >= -1e-14)
    assert np.allclose(predictable_bracket(m, n, F).values, predictable_bracket(n, m, F).values)
    both = AdaptedPath(m.values + 2 * n.values, F)
    lin = predictable_bracket(both, n, F).values
    assert np.allclose(lin, predictable_bracket(m, n, F).values + 2 * predictable_bracket(n, n, F).values, atol=1e-12)
