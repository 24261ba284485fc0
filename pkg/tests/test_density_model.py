import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from enlargekit.combinatorics import all_permutations, enumerate_injections, partition_label
from enlargekit.density_model import (
    ModelParams,
    a_tilde,
    a_tilde_rho,
    check_aAA,
    density,
    martingale_gradient,
    martingale_value,
    simulate,
    simulate_batch,
    symmetrize,
)

P2 = ModelParams((-0.5, -0.2), (0.4, 0.6), (0.5, -0.3))
P3 = ModelParams((-0.5, -0.3, 0.1), (0.4, 0.5, 0.3), (0.5, 0.2, 0.7))


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams((0.0,), (-1.0,), (0.1,))
    with pytest.raises(ValueError):
        ModelParams((0.0,), (1.0,), (1.0,))
    with pytest.raises(ValueError):
        ModelParams((0.0,), (1.0,), (0.1,), t_max=1.0)
    with pytest.raises(ValueError):
        ModelParams((0.0, 1.0), (1.0,), (0.1,))
    with pytest.raises(ValueError):
        ModelParams((0.0,), (1.0,), (0.1,), martingale="square")
    assert ModelParams.symmetric(3).n == 3


def test_density_errors():
    with pytest.raises(ValueError):
        density(P2, 0.5, 0.0, [0.5, -0.1])
    with pytest.raises(ValueError):
        density(P2, 0.95, 0.0, [0.5, 0.5])
    with pytest.raises(ValueError):
        density(P2, 0.5, 0.0, [0.5])


def test_independent_case():
    p = ModelParams((-0.5, 0.2), (0.4, 0.3), (0.0, 0.0))
    x = np.array([0.7, 1.3])
    ref = stats.lognorm.pdf(x[0], 0.4, scale=math.exp(-0.5)) * stats.lognorm.pdf(x[1], 0.3, scale=math.exp(0.2))
    for t, w in [(0.0, 0.0), (0.5, 1.3), (0.9, -2.0)]:
        ev = density(p, t, w, x)
        assert ev.a == pytest.approx(ref, rel=1e-12)
        assert ev.u == 0.0


def test_initial_density_is_unconditional():
    """At t = 0 the density is the lognormal law of the times with the factor integrated out."""
    rng = np.random.default_rng(0)
    b = np.asarray(P3.sigma) * np.asarray(P3.rho)
    cov = np.diag(np.asarray(P3.sigma) ** 2 * (1 - np.asarray(P3.rho) ** 2)) + np.outer(b, b)
    for _ in range(10):
        x = np.exp(rng.normal(size=3) * 0.5)
        ref = stats.multivariate_normal(P3.mu, cov).pdf(np.log(x)) / np.prod(x)
        assert density(P3, 0.0, 0.0, x).a == pytest.approx(ref, rel=1e-10)


def test_conditional_density_matches_gaussian_conditioning():
    """Given W_t = w, ln tau is Gaussian with the factor's remaining variance."""
    rng = np.random.default_rng(1)
    s, r = np.asarray(P3.sigma), np.asarray(P3.rho)
    for _ in range(10):
        t, w = rng.uniform(0, 0.9), rng.normal()
        mean = np.asarray(P3.mu) + s * r * w
        cov = np.diag(s**2 * (1 - r**2)) + (1 - t) * np.outer(s * r, s * r)
        x = np.exp(mean + rng.normal(size=3) * 0.3)
        ev = density(P3, t, w, x)
        assert ev.a == pytest.approx(stats.multivariate_normal(mean, cov).pdf(np.log(x)) / np.prod(x), rel=1e-10)
        assert np.allclose(ev.variances, s**2 * (1 - r**2 * t))
        assert np.allclose(ev.means, mean)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.85), st.floats(-2, 2), st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3), st.sampled_from(["brownian", "tanh"]))
def test_u_matches_finite_difference(t, w, logx, mart):
    p = ModelParams(P3.mu, P3.sigma, P3.rho, martingale=mart)
    x = np.exp(np.array(logx))
    h = 1e-5
    fd = (density(p, t, w + h, x).a - density(p, t, w - h, x).a) / (2 * h)
    ev = density(p, t, w, x)
    assert ev.dadw == pytest.approx(fd, rel=1e-6, abs=1e-12 * ev.a)
    mfd = (martingale_value(p, t, w + h) - martingale_value(p, t, w - h)) / (2 * h)
    assert float(martingale_gradient(p, t, w)) == pytest.approx(float(mfd), rel=1e-6)
    assert ev.u * float(martingale_gradient(p, t, w)) == pytest.approx(ev.dadw, rel=1e-12, abs=1e-300)


def test_tanh_martingale_matches_simulation():
    p = ModelParams.symmetric(1, martingale="tanh")
    rng = np.random.default_rng(0)
    w1 = 0.4 + math.sqrt(0.5) * rng.standard_normal(400_000)
    mc = np.tanh(w1)
    assert float(martingale_value(p, 0.5, 0.4)) == pytest.approx(mc.mean(), abs=3 * mc.std() / math.sqrt(mc.size))


def test_normalization_by_quadrature():
    rng = np.random.default_rng(2)
    for _ in range(3):
        t, w = rng.uniform(0, 0.9), rng.normal()
        f = lambda y, x: density(P2, t, w, np.array([math.exp(x), math.exp(y)])).a * math.exp(x + y)
        val, err = integrate.dblquad(f, -8, 8, -8, 8, epsabs=1e-11)
        assert val == pytest.approx(1.0, abs=1e-8)


def test_simulation_determinism_and_batch():
    grid = np.linspace(0, 0.9, 11)
    a, b = simulate(P2, grid, 7, path_index=3), simulate(P2, grid, 7, path_index=3)
    assert np.array_equal(a.w_path, b.w_path) and np.array_equal(a.tau, b.tau)
    batch = simulate_batch(P2, grid, 5, 7)
    assert np.array_equal(batch.w_paths[3], a.w_path) and np.array_equal(batch.tau[3], a.tau)
    assert a.label == partition_label(list(a.tau), 1)
    assert np.all(a.tau > 0)


def test_simulated_marginals():
    grid = np.linspace(0, 0.9, 4)
    batch = simulate_batch(P2, grid, 100_000, 0)
    logt = np.log(batch.tau)
    se = np.asarray(P2.sigma) / math.sqrt(batch.n_paths)
    assert np.all(np.abs(logt.mean(axis=0) - np.asarray(P2.mu)) < 3 * se)
    indep = simulate_batch(ModelParams((0.0, 0.0), (0.4, 0.4), (0.0, 0.0)), grid, 20_000, 1)
    corr = np.corrcoef(np.log(indep.tau[:, 0]), indep.w1)[0, 1]
    assert abs(corr) < 3 / math.sqrt(20_000)
    # factor loading reproduced: cov(ln tau_i, W_1) = sigma_i rho_i
    cov = np.cov(logt[:, 0], batch.w1)[0, 1]
    assert cov == pytest.approx(0.4 * 0.5, abs=0.01)


def test_symmetrize():
    x = np.array([0.3, 1.1, 2.0])
    g = lambda y: y[..., 0] * y[..., 1] ** 2 + y[..., 2]
    explicit = sum(g(x[list(pi)]) for pi in itertools.permutations(range(3)))
    assert symmetrize(g, x) == pytest.approx(explicit)
    assert symmetrize(lambda y: y.sum(axis=-1), x) == pytest.approx(6 * x.sum())
    assert symmetrize(lambda y: y[..., 0], np.array([2.0, 5.0])) == pytest.approx(7.0)
    for pi in all_permutations(3):
        assert symmetrize(g, x[[p - 1 for p in pi]]) == pytest.approx(symmetrize(g, x))
    with pytest.raises(ValueError):
        symmetrize(g, np.ones(7))


def test_a_tilde():
    t, w = 0.3, 0.4
    assert a_tilde(P2, t, w, [1.0, 0.5]) == 0.0
    x = np.array([0.5, 1.0])
    hand = density(P2, t, w, x).a + density(P2, t, w, x[::-1]).a
    assert a_tilde(P2, t, w, x) == pytest.approx(hand)
    # n = 2, k = 1: rho = (2) keeps the permutation sending coordinate 2 first
    assert a_tilde_rho(P2, (2,), t, w, x) == pytest.approx(density(P2, t, w, x[::-1]).a)
    assert a_tilde_rho(P2, (1,), t, w, x) == pytest.approx(density(P2, t, w, x).a)
    y = np.array([0.4, 0.9, 1.7])
    for k in (1, 2, 3):
        total = sum(a_tilde_rho(P3, rho, t, w, y) for rho in enumerate_injections(k, 3))
        assert total == pytest.approx(a_tilde(P3, t, w, y), rel=1e-12)
    single = a_tilde_rho(P3, (3, 1, 2), t, w, y)
    # pi with pi(3)=1, pi(1)=2, pi(2)=3 reads x as (x_2, x_3, x_1)
    assert single == pytest.approx(density(P3, t, w, y[[1, 2, 0]]).a)


def test_symmetrized_change_of_variables():
    """Integrating a against h(sorted x) equals integrating the sorted density against h."""
    t, w = 0.4, -0.3
    h = lambda lo, hi: (0.4 < lo <= 0.8) & (0.5 < hi <= 1.2)

    def at(x, y):
        return density(P2, t, w, np.exp([x, y])).a * math.exp(x + y)

    lo1, hi1, lo2, hi2 = (math.log(v) for v in (0.4, 0.8, 0.5, 1.2))
    # split the unordered integral along the diagonal; each half has smooth integrand and exact limits
    below = integrate.dblquad(lambda y, x: at(x, y), lo1, hi1, lambda x: max(x, lo2), hi2, epsabs=1e-12)[0]
    above = integrate.dblquad(lambda y, x: at(y, x), lo1, hi1, lambda x: max(x, lo2), hi2, epsabs=1e-12)[0]
    lhs = below + above

    def ordered(y, x):
        return float(a_tilde(P2, t, w, np.exp([x, y]))) * math.exp(x + y)

    rhs = integrate.dblquad(ordered, lo1, hi1, lambda x: max(x, lo2), hi2, epsabs=1e-12)[0]
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_check_aAA():
    zero = check_aAA(ModelParams.symmetric(2, rho=0.0), n_paths=500)
    assert zero.estimate == 0.0 and zero.finite
    base = check_aAA(ModelParams.symmetric(2), n_paths=4000, steps=50)
    assert base.finite and base.estimate > 0 and base.stderr > 0
    sweep = [check_aAA(ModelParams.symmetric(2, rho=r), n_paths=4000, steps=50, seed=1).estimate for r in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(b > a for a, b in zip(sweep, sweep[1:]))
