"""Integrals of the conditional density over order-constrained regions.

A region fixes some coordinates ("pinned") and integrates the rest.  Free
coordinates may belong to an increasing chain, to a tail that must exceed
the chain's last element, or be unconstrained; each may carry a box.

Conditioning on the terminal factor ``Y = W_1`` makes the times independent,
so for pinned values ``z``

    integral of a over region = f(z) * E[G(Y) | pinned values]

where ``f`` is the closed-form pinned marginal density, the posterior of
``Y`` is Gaussian, and ``G`` is a product of one-dimensional probabilities
and nested chain integrals.  The ``w``-derivative of ``a`` adds the weight
``(Y - w) / (1 - t)`` inside the expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtr, ndtri

from .density_model import ModelParams, marginal_log_density, martingale_gradient

INTEGRANDS = ("a", "u", "dadw")
Z_CUTOFF = 9.0  # standard normal mass beyond is below 1e-18


class IntegrationError(RuntimeError):
    def __init__(self, message: str, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


@dataclass(frozen=True)
class QuadratureConfig:
    method: str = "auto"          # auto | quadrature | mc
    legendre_nodes: int = 48
    hermite_nodes: int = 48
    max_quadrature_chain: int = 2
    mc_samples: int = 200_000
    seed: int = 0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-7
    error_estimate: bool = True   # rerun with half the nodes

    def __post_init__(self):
        if self.method not in ("auto", "quadrature", "mc"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.legendre_nodes, self.hermite_nodes, self.mc_samples) < 2:
            raise ValueError("node and sample counts must be at least 2")


@dataclass(frozen=True)
class MarginalQuery:
    """Region and integrand.  Coordinates are 1-based.

    ``pinned`` maps coordinate to value (arrays broadcast over a batch).
    ``chain`` lists coordinates, pinned or free, that must be strictly
    increasing.  ``tail`` coordinates must exceed the last chain element.
    ``boxes`` give open-closed intervals ``(lo, hi]`` per coordinate.
    """

    t: float
    w: object
    pinned: Mapping[int, object] = field(default_factory=dict)
    chain: tuple[int, ...] = ()
    tail: tuple[int, ...] = ()
    boxes: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    integrand: str = "a"

    def __post_init__(self):
        if self.integrand not in INTEGRANDS:
            raise ValueError(f"integrand must be one of {INTEGRANDS}")
        if set(self.tail) & set(self.chain):
            raise ValueError("a coordinate cannot be both in the chain and the tail")
        if set(self.tail) & set(self.pinned):
            raise ValueError("tail coordinates must be free")
        if len(set(self.chain)) != len(self.chain):
            raise ValueError("repeated chain coordinate")
        if self.tail and not self.chain:
            raise ValueError("a tail needs a chain to exceed")

    def validate(self, n: int) -> None:
        coords = set(self.pinned) | set(self.chain) | set(self.tail) | set(self.boxes)
        if any(not 1 <= c <= n for c in coords):
            raise ValueError(f"coordinate outside 1..{n}")
        for c, v in self.pinned.items():
            if np.any(np.asarray(v, dtype=float) <= 0):
                raise ValueError("pinned values must be strictly positive")

    def free_chain(self) -> list[int]:
        return [c for c in self.chain if c not in self.pinned]


@dataclass(frozen=True)
class MarginalResult:
    value: NDArray
    error: NDArray


def _box(q: MarginalQuery, c: int):
    return q.boxes.get(c, (0.0, math.inf))


class _Conditional:
    """Per-coordinate law of ``ln tau_i`` given ``Y``: ``N(mu_i + b_i Y, d_i)``."""

    def __init__(self, params: ModelParams):
        self.mu = np.asarray(params.mu)
        self.b = params.loading
        self.sd = np.sqrt(params.idio_var)

    def std(self, c: int, y: NDArray, x) -> NDArray:
        with np.errstate(divide="ignore"):
            lx = np.log(np.asarray(x, dtype=float))
        return (lx - self.mu[c - 1] - self.b[c - 1] * y) / self.sd[c - 1]

    def prob_between(self, c: int, y: NDArray, lo, hi) -> NDArray:
        zlo, zhi = self.std(c, y, lo), self.std(c, y, hi)
        # difference taken on the side with less cancellation
        upper = ndtr(-zlo) - ndtr(-zhi)
        lower = ndtr(zhi) - ndtr(zlo)
        return np.maximum(np.where(zlo > 0, upper, lower), 0.0)

    def log_pdf(self, c: int, y: NDArray, x) -> NDArray:
        z = self.std(c, y, x)
        return -0.5 * z**2 - math.log(self.sd[c - 1] * math.sqrt(2.0 * math.pi)) - np.log(x)


def _posterior(params: ModelParams, q: MarginalQuery):
    """Gaussian law of ``W_1`` given ``W_t = w`` and the pinned times."""
    c = 1.0 - q.t
    w = np.asarray(q.w, dtype=float)
    b, d, mu = params.loading, params.idio_var, np.asarray(params.mu)
    prec = 1.0 / c + sum(b[i - 1] ** 2 / d[i - 1] for i in q.pinned)
    lin = w / c
    for i, z in q.pinned.items():
        lin = lin + b[i - 1] * (np.log(np.asarray(z, dtype=float)) - mu[i - 1]) / d[i - 1]
    return lin / prec, 1.0 / prec


def _pinned_log_density(params: ModelParams, q: MarginalQuery):
    if not q.pinned:
        return 0.0
    coords = sorted(q.pinned)
    z = np.stack(np.broadcast_arrays(*[np.asarray(q.pinned[c], dtype=float) for c in coords]), axis=-1)
    return marginal_log_density(params, [c - 1 for c in coords], q.t, q.w, z)


def _chain_prob(cond: _Conditional, q: MarginalQuery, pins: Mapping[int, NDArray], y: NDArray, nodes: NDArray, weights: NDArray) -> NDArray:
    """``P(chain increasing, tail above chain, boxes | Y = y)`` for free coords.

    ``pins`` holds the pinned values shaped to broadcast against ``y``.
    """
    chain = list(q.chain)

    def tail_factor(x):
        out = np.ones(np.broadcast(y, x).shape)
        for c in q.tail:
            lo, hi = _box(q, c)
            out = out * cond.prob_between(c, y, np.maximum(x, lo), hi)
        return out

    def level(m: int, x):
        """Probability for elements ``m..`` given the previous element equals ``x``."""
        if m == len(chain):
            return tail_factor(x)
        c = chain[m]
        lo, hi = _box(q, c)
        if c in pins:
            z = pins[c]
            ok = (x < z) & (z > lo) & (z <= hi)
            return np.where(ok, level(m + 1, z), 0.0)
        a = np.maximum(x, lo)
        nxt = m + 1
        if nxt < len(chain) and chain[nxt] in pins:
            # a pinned successor caps this element; its own checks follow
            b = np.minimum(hi, pins[chain[nxt]])
            return cond.prob_between(c, y, a, b) * level(nxt, np.zeros(()))
        if nxt == len(chain) and not q.tail:
            return cond.prob_between(c, y, a, hi)
        # nested level: Gauss-Legendre in the standardised log coordinate,
        # truncated where the normal weight is negligible; nodes on a new leading axis
        za = np.clip(cond.std(c, y, a), -Z_CUTOFF, Z_CUTOFF)
        zb = np.clip(cond.std(c, y, hi), -Z_CUTOFF, Z_CUTOFF)
        za, zb = np.broadcast_arrays(za, zb)
        width = np.maximum(zb - za, 0.0)
        zs = za + nodes.reshape((-1,) + (1,) * za.ndim) * width
        xs = np.exp(cond.mu[c - 1] + cond.b[c - 1] * y + cond.sd[c - 1] * zs)
        phi = np.exp(-0.5 * zs**2) / math.sqrt(2.0 * math.pi)
        return width * np.tensordot(weights, phi * level(nxt, xs), axes=1)

    return level(0, np.zeros(()))


def _free_factor(cond: _Conditional, q: MarginalQuery, y: NDArray) -> NDArray:
    out = np.ones_like(y)
    used = set(q.chain) | set(q.tail) | set(q.pinned)
    for c, (lo, hi) in q.boxes.items():
        if c not in used:
            out = out * cond.prob_between(c, y, lo, hi)
    return out


def _pinned_box_ok(q: MarginalQuery):
    ok = True
    for c, z in q.pinned.items():
        if c in q.chain:
            continue  # checked inside the chain recursion
        lo, hi = _box(q, c)
        z = np.asarray(z, dtype=float)
        ok = ok & (z > lo) & (z <= hi)
    return ok


def _weight(q: MarginalQuery, y: NDArray, params: ModelParams) -> NDArray:
    if q.integrand == "a":
        return np.ones_like(y)
    w = np.asarray(q.w, dtype=float)[..., None]
    score = (y - w) / (1.0 - q.t)
    if q.integrand == "u":
        score = score / martingale_gradient(params, q.t, np.asarray(q.w, dtype=float))[..., None]
    return score


@lru_cache(maxsize=None)
def _hermite(n: int):
    hx, hw = np.polynomial.hermite_e.hermegauss(n)
    return hx, hw / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=None)
def _legendre(n: int):
    gx, gw = np.polynomial.legendre.leggauss(n)
    return 0.5 * (gx + 1.0), 0.5 * gw


def _quadrature(params: ModelParams, q: MarginalQuery, cfg: QuadratureConfig, hermite_nodes: int, integrands: Sequence[str]):
    cond = _Conditional(params)
    mean, var = _posterior(params, q)
    hx, hw = _hermite(hermite_nodes)
    y = np.asarray(mean)[..., None] + math.sqrt(var) * hx
    nodes, weights = _legendre(cfg.legendre_nodes)
    pins = {c: np.asarray(v, dtype=float)[..., None] for c, v in q.pinned.items()}
    base = _free_factor(cond, q, y) * _chain_prob(cond, q, pins, y, nodes, weights)
    scale = np.exp(_pinned_log_density(params, q))
    ok = _pinned_box_ok(q)
    return [scale * np.where(ok, (base * _weight(replace(q, integrand=f), y, params)) @ hw, 0.0) for f in integrands]


def _monte_carlo(params: ModelParams, q: MarginalQuery, cfg: QuadratureConfig):
    """Stratified sampling of ``Y`` from its posterior, then free coordinates."""
    cond = _Conditional(params)
    mean, var = _posterior(params, q)
    mean = np.asarray(mean, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    m = cfg.mc_samples
    strata = (np.arange(m) + rng.random(m)) / m
    y = mean[..., None] + math.sqrt(var) * ndtri(strata)
    n = params.n
    x = {}
    for c in range(1, n + 1):
        if c in q.pinned:
            x[c] = np.broadcast_to(np.asarray(q.pinned[c], dtype=float)[..., None], y.shape)
        else:
            eps = rng.standard_normal(y.shape)
            x[c] = np.exp(cond.mu[c - 1] + cond.b[c - 1] * y + cond.sd[c - 1] * eps)
    ind = np.ones(y.shape, dtype=bool)
    for c, (lo, hi) in q.boxes.items():
        ind &= (x[c] > lo) & (x[c] <= hi)
    for a, b in zip(q.chain, q.chain[1:]):
        ind &= x[a] < x[b]
    if q.chain:
        top = x[q.chain[-1]]
        for c in q.tail:
            ind &= x[c] > top
    vals = ind * _weight(q, y, params)
    scale = np.exp(_pinned_log_density(params, q))
    est = scale * vals.mean(axis=-1)
    err = 3.0 * np.abs(scale) * vals.std(axis=-1) / math.sqrt(m)
    return est, err


def marginalize_many(params: ModelParams, q: MarginalQuery, integrands: Sequence[str], cfg: QuadratureConfig | None = None) -> dict[str, MarginalResult]:
    """Several integrands over one region, sharing the region probabilities.

    ``q.integrand`` is ignored.
    """
    cfg = cfg or QuadratureConfig()
    params.check_time(q.t)
    q.validate(params.n)
    if any(f not in INTEGRANDS for f in integrands):
        raise ValueError(f"integrand must be one of {INTEGRANDS}")
    use_mc = cfg.method == "mc" or (cfg.method == "auto" and len(q.free_chain()) > cfg.max_quadrature_chain)
    out = {}
    if use_mc:
        for f in integrands:
            out[f] = _monte_carlo(params, replace(q, integrand=f), cfg)
    else:
        values = _quadrature(params, q, cfg, cfg.hermite_nodes, integrands)
        if cfg.error_estimate:
            half = replace(cfg, legendre_nodes=max(cfg.legendre_nodes // 2, 8))
            coarse = _quadrature(params, q, half, max(cfg.hermite_nodes // 2, 8), integrands)
        else:
            coarse = values
        for f, value, c in zip(integrands, values, coarse):
            if not np.all(np.isfinite(value)):
                raise IntegrationError("non-finite quadrature value", value)
            out[f] = (value, np.abs(value - c))
    results = {}
    for f, (value, err) in out.items():
        if f == "a" and np.any(value < -np.maximum(err, cfg.abs_tol)):
            raise IntegrationError("negative mass for a nonnegative integrand", value)
        results[f] = MarginalResult(np.asarray(value, dtype=float), np.asarray(err, dtype=float))
    return results


def marginalize(params: ModelParams, q: MarginalQuery, cfg: QuadratureConfig | None = None) -> MarginalResult:
    """Integral of ``a``, ``u`` or ``da/dw`` over the free coordinates of the region."""
    return marginalize_many(params, q, (q.integrand,), cfg)[q.integrand]


def survival(params: ModelParams, l: int, y, t: float, w) -> NDArray:
    """``P(tau_l > y | W_t = w)`` (``l`` is 1-based)."""
    params.check_time(t)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("survival is evaluated at positive times")
    mean = params.log_mean(w)[..., l - 1]
    sd = math.sqrt(params.log_var(t)[l - 1])
    return ndtr((mean - np.log(y)) / sd)
