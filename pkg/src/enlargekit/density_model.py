"""One-factor lognormal model for ``n`` random times.

``ln tau_i = mu_i + sigma_i (rho_i W_1 + sqrt(1 - rho_i^2) eps_i)`` with ``W`` a
Brownian motion observed on ``[0, t_max]`` and independent standard normal
``eps_i``.  Given ``W_t = w`` the log-times are jointly Gaussian with mean
``mu + b w`` and covariance ``diag(d) + (1 - t) b b^T`` where ``b_i =
sigma_i rho_i`` and ``d_i = sigma_i^2 (1 - rho_i^2)``.  Conditionally on
``W_1`` the times are independent, which is what the integrators exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats
from scipy.special import ndtr

from .combinatorics import (
    Injection,
    all_permutations,
    apply_permutation,
    enumerate_injections,
    factorial_guard,
    fixing_permutations,
    partition_labels,
    sorted_times,
)

MARTINGALES = ("brownian", "tanh")
_HERMITE_NODES = 64


@dataclass(frozen=True)
class ModelParams:
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    rho: tuple[float, ...]
    t_max: float = 0.9
    martingale: str = "brownian"

    def __post_init__(self):
        mu, sigma, rho = (tuple(float(v) for v in np.atleast_1d(a)) for a in (self.mu, self.sigma, self.rho))
        if not (len(mu) == len(sigma) == len(rho)) or len(mu) == 0:
            raise ValueError("mu, sigma and rho must have the same positive length")
        if any(s <= 0 for s in sigma):
            raise ValueError("log-volatilities must be positive")
        if any(abs(r) >= 1 for r in rho):
            raise ValueError("factor loadings must lie in (-1, 1)")
        if not 0 < self.t_max < 1:
            raise ValueError("horizon must satisfy 0 < t_max < 1")
        if self.martingale not in MARTINGALES:
            raise ValueError(f"unknown martingale {self.martingale!r}; choose from {MARTINGALES}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def symmetric(cls, n: int, mu: float = -0.5, sigma: float = 0.4, rho: float = 0.5, **kw) -> "ModelParams":
        return cls((mu,) * n, (sigma,) * n, (rho,) * n, **kw)

    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def loading(self) -> NDArray:
        return np.asarray(self.sigma) * np.asarray(self.rho)

    @property
    def idio_var(self) -> NDArray:
        s, r = np.asarray(self.sigma), np.asarray(self.rho)
        return s**2 * (1.0 - r**2)

    def log_mean(self, w) -> NDArray:
        """Conditional mean of ``ln tau`` given ``W_t = w``; shape ``w.shape + (n,)``."""
        return np.asarray(self.mu) + self.loading * np.asarray(w, dtype=float)[..., None]

    def log_var(self, t: float) -> NDArray:
        """Conditional marginal variances ``sigma_i^2 (1 - rho_i^2 t)``."""
        return self.idio_var + (1.0 - t) * self.loading**2

    def check_time(self, t: float) -> None:
        if not 0 <= t <= self.t_max:
            raise ValueError(f"t={t} outside [0, {self.t_max}]")


@dataclass(frozen=True)
class DensityEval:
    a: NDArray
    dadw: NDArray
    u: NDArray
    means: NDArray
    variances: NDArray


def _hermite():
    x, wts = np.polynomial.hermite_e.hermegauss(_HERMITE_NODES)
    return x, wts / math.sqrt(2.0 * math.pi)


_GH_X, _GH_W = _hermite()


def martingale_value(params: ModelParams, t: float, w) -> NDArray:
    """``M_t`` as a function of ``W_t``: ``W`` itself or ``E[tanh(W_1) | F_t]``."""
    w = np.asarray(w, dtype=float)
    if params.martingale == "brownian":
        return w
    return np.tanh(w[..., None] + math.sqrt(1.0 - t) * _GH_X) @ _GH_W


def martingale_gradient(params: ModelParams, t: float, w) -> NDArray:
    """``dM_t / dW_t``; the bracket rate is its square."""
    w = np.asarray(w, dtype=float)
    if params.martingale == "brownian":
        return np.ones_like(w)
    return (1.0 / np.cosh(w[..., None] + math.sqrt(1.0 - t) * _GH_X) ** 2) @ _GH_W


def _log_lognormal_joint(logx: NDArray, mean: NDArray, d: NDArray, b: NDArray, c: float):
    """Log-density of ``ln x ~ N(mean, diag(d) + c b b^T)`` and the derivative
    of the quadratic form w.r.t. a shift of the mean along ``b``.

    Uses Sherman-Morrison so the cost is linear in the dimension.
    """
    r = logx - mean
    dinv_b = b / d
    denom = 1.0 + c * np.dot(b, dinv_b)
    rd = r / d
    proj = rd @ b
    quad = np.sum(r * rd, axis=-1) - c * proj**2 / denom
    logdet = np.sum(np.log(d)) + math.log(denom)
    k = r.shape[-1]
    logpdf = -0.5 * (quad + logdet + k * math.log(2.0 * math.pi)) - np.sum(logx, axis=-1)
    # b^T C^{-1} r
    score = proj - c * proj * np.dot(b, dinv_b) / denom
    return logpdf, score


def density(params: ModelParams, t: float, w, x, residual_scale: float = 1.0) -> DensityEval:
    """Conditional density of the times given ``W_t = w`` and its ``w``-derivative.

    ``residual_scale`` multiplies the unexplained factor variance ``1 - t``;
    any value other than 1 gives a deliberately wrong density (a negative
    control for the martingale test).
    """
    params.check_time(t)
    if residual_scale <= 0:
        raise ValueError("residual_scale must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n:
        raise ValueError(f"points must have {params.n} coordinates")
    if np.any(x <= 0):
        raise ValueError("density is defined for strictly positive times only")
    w = np.asarray(w, dtype=float)
    mean = params.log_mean(w)
    logpdf, score = _log_lognormal_joint(np.log(x), mean, params.idio_var, params.loading, residual_scale * (1.0 - t))
    a = np.exp(logpdf)
    dadw = a * score
    u = dadw / martingale_gradient(params, t, w)
    return DensityEval(a=a, dadw=dadw, u=u, means=np.broadcast_to(mean, x.shape), variances=params.log_var(t))


def marginal_log_density(params: ModelParams, coords: Sequence[int], t: float, w, z) -> NDArray:
    """Log-density of ``tau_coords`` (0-based) at ``z`` given ``W_t = w``."""
    coords = list(coords)
    z = np.asarray(z, dtype=float)
    mean = params.log_mean(w)[..., coords]
    logpdf, _ = _log_lognormal_joint(np.log(z), mean, params.idio_var[coords], params.loading[coords], 1.0 - t)
    return logpdf


@dataclass(frozen=True)
class SimulatedScenario:
    grid: NDArray
    w_path: NDArray
    w1: float
    tau: NDArray
    sorted: NDArray
    label: Injection


@dataclass(frozen=True)
class SimulatedBatch:
    grid: NDArray
    w_paths: NDArray   # (paths, len(grid))
    w1: NDArray
    tau: NDArray       # (paths, n)

    @property
    def n_paths(self) -> int:
        return self.tau.shape[0]

    def scenario(self, i: int, k: int = 1) -> SimulatedScenario:
        label = enumerate_injections(k, self.tau.shape[1])[int(partition_labels(self.tau[i], k))]
        return SimulatedScenario(self.grid, self.w_paths[i], float(self.w1[i]), self.tau[i], sorted_times(self.tau[i]), label)


def _check_grid(params: ModelParams, grid) -> NDArray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise ValueError("simulation grid must start at 0")
    if np.any(np.diff(grid) <= 0) or grid[-1] > params.t_max + 1e-12:
        raise ValueError(f"grid must increase within [0, {params.t_max}]")
    return grid


def _path_draws(params: ModelParams, dt: NDArray, gen: np.random.Generator):
    z = gen.standard_normal(dt.size + 1 + params.n)
    return z[: dt.size], z[dt.size], z[dt.size + 1:]


def _assemble(params: ModelParams, grid: NDArray, incr: NDArray, last: NDArray, eps: NDArray):
    dt = np.diff(grid)
    w_paths = np.concatenate([np.zeros(incr.shape[:-1] + (1,)), np.cumsum(incr * np.sqrt(dt), axis=-1)], axis=-1)
    w1 = w_paths[..., -1] + math.sqrt(1.0 - grid[-1]) * last
    s, r = np.asarray(params.sigma), np.asarray(params.rho)
    tau = np.exp(np.asarray(params.mu) + s * (r * w1[..., None] + np.sqrt(1.0 - r**2) * eps))
    return w_paths, w1, tau


def simulate(params: ModelParams, grid, seed: int, k: int = 1, path_index: int = 0) -> SimulatedScenario:
    """One path; the stream is keyed by ``(seed, path_index)``."""
    grid = _check_grid(params, grid)
    gen = np.random.default_rng([seed, path_index])
    incr, last, eps = _path_draws(params, np.diff(grid), gen)
    w_paths, w1, tau = _assemble(params, grid, incr, np.asarray(last), eps)
    label = enumerate_injections(k, params.n)[int(partition_labels(tau, k))]
    return SimulatedScenario(grid, w_paths, float(w1), tau, sorted_times(tau), label)


def simulate_batch(params: ModelParams, grid, n_paths: int, seed: int) -> SimulatedBatch:
    """``n_paths`` independent paths; path ``i`` equals ``simulate(..., path_index=i)``."""
    grid = _check_grid(params, grid)
    dt = np.diff(grid)
    draws = np.empty((n_paths, dt.size + 1 + params.n))
    for i in range(n_paths):
        draws[i] = np.random.default_rng([seed, i]).standard_normal(draws.shape[1])
    incr, last, eps = draws[:, : dt.size], draws[:, dt.size], draws[:, dt.size + 1:]
    w_paths, w1, tau = _assemble(params, grid, incr, last, eps)
    return SimulatedBatch(grid, w_paths, w1, tau)


def symmetrize(g: Callable[[NDArray], NDArray], x) -> NDArray:
    """Sum of ``g`` over all coordinate permutations of ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    factorial_guard(n)
    return sum(g(apply_permutation(pi, x)) for pi in all_permutations(n))


def _ordered(x: NDArray) -> NDArray:
    return np.all(np.diff(x, axis=-1) > 0, axis=-1)


def a_tilde(params: ModelParams, t: float, w, x) -> NDArray:
    """Density of the sorted vector: symmetrized density on the ordered cone."""
    x = np.asarray(x, dtype=float)
    factorial_guard(params.n)
    total = symmetrize(lambda y: density(params, t, w, y).a, x)
    return np.where(_ordered(x), total, 0.0)


def a_tilde_rho(params: ModelParams, rho: Injection, t: float, w, x) -> NDArray:
    """Like :func:`a_tilde` but summing only permutations that send ``rho(i)`` to ``i``."""
    x = np.asarray(x, dtype=float)
    factorial_guard(params.n)
    total = sum(density(params, t, w, apply_permutation(pi, x)).a for pi in fixing_permutations(rho, params.n))
    return np.where(_ordered(x), total, 0.0)


@dataclass(frozen=True)
class AAAReport:
    estimate: float
    stderr: float
    n_paths: int
    steps: int
    finite: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.finite else "FAIL"
        return f"{verdict} integrability estimate {self.estimate:.6g} +/- {self.stderr:.2g} ({self.n_paths} paths)"


def check_aAA(params: ModelParams, n_paths: int = 20_000, seed: int = 0, steps: int = 200, margin: float = 1e6) -> AAAReport:
    """Monte Carlo estimate of ``E int_0^t_max |u_s(tau)| / a_s(tau) d<M,M>_s``.

    For this model ``|u| / a`` times the bracket rate is ``|d ln a / dw| * h_w``
    with ``h_w`` the derivative of ``M`` in ``W``.
    """
    grid = np.linspace(0.0, params.t_max, steps + 1)
    batch = simulate_batch(params, grid, n_paths, seed)
    dt = np.diff(grid)
    total = np.zeros(n_paths)
    logtau = np.log(batch.tau)
    for m in range(steps):
        t, w = grid[m], batch.w_paths[:, m]
        _, score = _log_lognormal_joint(logtau, params.log_mean(w), params.idio_var, params.loading, 1.0 - t)
        total += np.abs(score) * martingale_gradient(params, t, w) * dt[m]
    est = float(total.mean())
    se = float(total.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    finite = bool(np.isfinite(est) and np.isfinite(se) and est + 5 * se < margin)
    return AAAReport(est, se, n_paths, steps, finite, {"seed": seed, "t_max": params.t_max})


def lognormal_pdf(x, mean, var) -> NDArray:
    return stats.lognorm.pdf(x, s=np.sqrt(var), scale=np.exp(mean))


def lognormal_sf(x, mean, var) -> NDArray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        z = (np.asarray(mean) - np.log(x)) / np.sqrt(var)
    return ndtr(z)
