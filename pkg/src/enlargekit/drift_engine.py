"""Conditional expectations and drifts in filtrations enlarged by random times.

Three filtrations are involved for an injection ``rho``:

* the base information plus the values ``tau_rho(T)`` known from time 0,
* the progressive enlargement by ``tau_rho`` (times revealed when they occur),
* the progressive enlargement by the ``k`` smallest sorted times.

All ratios are built from :func:`marginalize` calls on the density model.
The drift integral is discretised with a left-point rule: on ``(v_m,
v_{m+1}]`` the integrand is frozen at ``v_m`` and at the regime observed at
``v_m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .combinatorics import (
    Injection,
    all_permutations,
    enumerate_injections,
    factorial_guard,
    fixing_permutations,
    inverse_permutation,
)
from .density_model import ModelParams, SimulatedScenario, martingale_gradient
from .marginal_integrator import MarginalQuery, QuadratureConfig, marginalize, marginalize_many

DENOM_FLOOR = 1e-300
TARGETS = ("initial", "progressive", "sorted")


@dataclass(frozen=True)
class GFunction:
    """Built-in integrands ``g``: constant one, a box indicator, or the
    indicator that ``rho`` realises the ``k`` smallest times in order."""

    kind: str = "one"
    boxes: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    rho: Injection | None = None

    def __post_init__(self):
        if self.kind not in ("one", "box", "zeta"):
            raise ValueError(f"unknown g kind {self.kind!r}")
        if self.kind == "zeta" and not self.rho:
            raise ValueError("zeta needs an injection")

    @classmethod
    def box(cls, boxes: Mapping[int, tuple[float, float]]) -> "GFunction":
        return cls("box", dict(boxes))

    @classmethod
    def zeta(cls, rho: Injection) -> "GFunction":
        return cls("zeta", rho=tuple(rho))

    def __call__(self, x) -> NDArray:
        x = np.asarray(x, dtype=float)
        if self.kind == "one":
            return np.ones(x.shape[:-1])
        if self.kind == "box":
            out = np.ones(x.shape[:-1], dtype=bool)
            for c, (lo, hi) in self.boxes.items():
                out &= (x[..., c - 1] > lo) & (x[..., c - 1] <= hi)
            return out.astype(float)
        sel = x[..., [r - 1 for r in self.rho]]
        rest = [c for c in range(1, x.shape[-1] + 1) if c not in self.rho]
        ok = np.all(np.diff(sel, axis=-1) > 0, axis=-1)
        if rest:
            ok &= sel[..., -1] < x[..., [c - 1 for c in rest]].min(axis=-1)
        return ok.astype(float)


@dataclass(frozen=True)
class CondExpQuery:
    target: str
    rho: Injection
    g: GFunction = GFunction()
    time: float = 0.0
    subset: tuple[int, ...] = ()   # T, used by the "initial" target
    left: bool = False

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if any(not 1 <= i <= len(self.rho) for i in self.subset):
            raise ValueError("subset must lie in 1..k")


def _intersect(boxes: dict, c: int, lo: float, hi: float) -> None:
    old_lo, old_hi = boxes.get(c, (0.0, math.inf))
    boxes[c] = (max(old_lo, lo), min(old_hi, hi))


def _w_at(scenario: SimulatedScenario, u: float) -> float:
    idx = int(np.searchsorted(scenario.grid, u - 1e-12))
    if idx >= scenario.grid.size or abs(scenario.grid[idx] - u) > 1e-9:
        raise ValueError(f"time {u} is not a point of the scenario grid")
    return float(scenario.w_path[idx])


def _g_region(g: GFunction, n: int, boxes: dict):
    """Chain and tail contributed by ``g``; boxes are merged in place."""
    if g.kind == "box":
        for c, (lo, hi) in g.boxes.items():
            _intersect(boxes, c, lo, hi)
    if g.kind == "zeta":
        rest = tuple(c for c in range(1, n + 1) if c not in g.rho)
        return tuple(g.rho), rest
    return (), ()


def _ratio(params, num_q: MarginalQuery, den_q: MarginalQuery, cfg) -> tuple[NDArray, NDArray]:
    num = marginalize(params, num_q, cfg)
    den = marginalize(params, den_q, cfg)
    ok = den.value > DENOM_FLOOR
    safe = np.where(ok, den.value, 1.0)
    val = np.where(ok, num.value / safe, 0.0)
    err = np.where(ok, (num.error + np.abs(val) * den.error) / safe, 0.0)
    return val, err


def cond_exp_initial(params: ModelParams, scenario: SimulatedScenario, q: CondExpQuery, cfg: QuadratureConfig | None = None) -> float:
    """Expectation of ``g(tau)`` given base information at ``U`` and ``tau_rho(T)``."""
    if q.target != "initial":
        raise ValueError("query target must be 'initial'")
    w = _w_at(scenario, q.time)
    pinned = {q.rho[i - 1]: float(scenario.tau[q.rho[i - 1] - 1]) for i in q.subset}
    boxes: dict = {}
    chain, tail = _g_region(q.g, params.n, boxes)
    num = MarginalQuery(q.time, w, pinned, chain, tail, boxes)
    den = MarginalQuery(q.time, w, pinned)
    return float(_ratio(params, num, den, cfg)[0])


def _observed_subset(times: NDArray, u: float, left: bool) -> tuple[int, ...]:
    seen = times < u if left else times <= u
    return tuple(int(i) + 1 for i in np.flatnonzero(seen))


def cond_exp_progressive(params: ModelParams, scenario: SimulatedScenario, q: CondExpQuery, cfg: QuadratureConfig | None = None) -> float:
    """Expectation of ``g(tau)`` given the progressive enlargement by ``tau_rho``
    at ``U`` (or just before ``U`` when ``left`` is set)."""
    if q.target != "progressive":
        raise ValueError("query target must be 'progressive'")
    w = _w_at(scenario, q.time)
    tau_rho = scenario.tau[[r - 1 for r in q.rho]]
    T = _observed_subset(tau_rho, q.time, q.left)
    pinned = {q.rho[i - 1]: float(tau_rho[i - 1]) for i in T}
    unseen = [q.rho[i - 1] for i in range(1, len(q.rho) + 1) if i not in T]
    boxes: dict = {}
    for c in unseen:
        _intersect(boxes, c, q.time, math.inf)
    den = MarginalQuery(q.time, w, pinned, boxes=dict(boxes))
    chain, tail = _g_region(q.g, params.n, boxes)
    num = MarginalQuery(q.time, w, pinned, chain, tail, boxes)
    return float(_ratio(params, num, den, cfg)[0])


def _sorted_regime(sorted_k: NDArray, u: float, left: bool) -> int:
    return int(np.count_nonzero(sorted_k < u if left else sorted_k <= u))


def _perm_query(pi, j: int, k: int, t: float, w, pinned_sorted: Sequence, threshold: float | None, integrand: str = "a", extra_boxes=None) -> MarginalQuery:
    """Region of ``a(pi(x))`` on the ordered cone with ``x_1..x_j`` pinned.

    With ``y = pi(x)`` the coordinate ``y_m`` carries ``x_{pi(m)}``, so the
    ordered chain on ``x`` is the chain ``pi^{-1}(1), ..., pi^{-1}(n)`` on ``y``.
    """
    inv = inverse_permutation(pi)
    pinned = {inv[i]: pinned_sorted[i] for i in range(j)}
    boxes = dict(extra_boxes or {})
    if threshold is not None and j < len(inv):
        _intersect(boxes, inv[j], threshold, math.inf)
    return MarginalQuery(t, w, pinned, tuple(inv), (), boxes, integrand)


def cond_exp_sorted(params: ModelParams, scenario: SimulatedScenario, q: CondExpQuery, cfg: QuadratureConfig | None = None) -> float:
    """Expectation of ``g(tau)`` given the enlargement by the ``k`` smallest times."""
    if q.target != "sorted":
        raise ValueError("query target must be 'sorted'")
    n, k = params.n, len(q.rho)
    factorial_guard(n)
    w = _w_at(scenario, q.time)
    sorted_k = np.sort(scenario.tau)[:k]
    j = _sorted_regime(sorted_k, q.time, q.left)
    threshold = q.time if j < k else None
    perms = all_permutations(n)
    if q.g.kind == "zeta":
        # on the ordered cone zeta(pi(x)) is 1 exactly for the fixing permutations
        num_perms = fixing_permutations(q.g.rho, n)
    else:
        num_perms = perms
    gboxes = q.g.boxes if q.g.kind == "box" else {}
    num = sum(marginalize(params, _perm_query(pi, j, k, q.time, w, sorted_k, threshold, extra_boxes=gboxes), cfg).value for pi in num_perms)
    den = sum(marginalize(params, _perm_query(pi, j, k, q.time, w, sorted_k, threshold), cfg).value for pi in perms)
    return float(num / den) if den > DENOM_FLOOR else 0.0


def n_rho_minus(params: ModelParams, scenario: SimulatedScenario, rho: Injection, v: float, cfg: QuadratureConfig | None = None) -> float:
    """Probability that ``rho`` realises the sorted times, given the
    ``tau_rho``-enlarged information strictly before ``v``."""
    q = CondExpQuery("progressive", tuple(rho), GFunction.zeta(rho), v, left=True)
    return cond_exp_progressive(params, scenario, q, cfg)


@dataclass
class DriftPath:
    grid: NDArray
    regime: NDArray
    increments: NDArray
    cumulative: NDArray
    error_bound: NDArray
    injections: list = field(default_factory=list)
    ratios: NDArray | None = None      # (steps, injections)
    weights: NDArray | None = None     # (steps, injections)
    flags: list = field(default_factory=list)

    def rows(self):
        """CSV rows: v, regime, per-injection ratio and weight, increment, cumulative, error."""
        for m in range(self.increments.size):
            ratios = [] if self.ratios is None else list(self.ratios[m])
            weights = [] if self.weights is None else list(self.weights[m])
            yield [self.grid[m], int(self.regime[m]), *ratios, *weights, self.increments[m], self.cumulative[m + 1], self.error_bound[m]]

    def header(self) -> list[str]:
        names = ["-".join(map(str, r)) for r in self.injections]
        ratios = [] if self.ratios is None else [f"ratio_{s}" for s in names]
        weights = [] if self.weights is None else [f"weight_{s}" for s in names]
        return ["v", "regime", *ratios, *weights, "increment", "cumulative", "error_bound"]


def _bracket_rate(params: ModelParams, t: float, w) -> NDArray:
    return martingale_gradient(params, t, w) ** 2


def _check_drift_grid(params: ModelParams, grid) -> NDArray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("drift grid must be increasing with at least two points")
    if grid[0] < 0 or grid[-1] > params.t_max + 1e-12:
        raise ValueError("drift grid must lie in [0, t_max]")
    return grid


def _tau_rho_rate(params: ModelParams, rho: Injection, g: GFunction, v: float, w, T: tuple[int, ...], pinned_vals: Sequence, cfg) -> tuple[NDArray, NDArray]:
    """Ratio of ``u`` over ``a`` for the region where the indices ``T`` of
    ``rho`` are observed (pinned) and the others exceed ``v``."""
    pinned = {rho[i - 1]: z for i, z in zip(T, pinned_vals)}
    boxes: dict = {}
    for i in range(1, len(rho) + 1):
        if i not in T:
            _intersect(boxes, rho[i - 1], v, math.inf)
    den = MarginalQuery(v, w, pinned, boxes=dict(boxes))
    chain, tail = _g_region(g, params.n, boxes)
    if g.kind == "one":
        res = marginalize_many(params, den, ("u", "a"), cfg)
        num_r, den_r = res["u"], res["a"]
    else:
        num_r = marginalize(params, MarginalQuery(v, w, pinned, chain, tail, boxes, integrand="u"), cfg)
        den_r = marginalize(params, den, cfg)
    ok = den_r.value > DENOM_FLOOR
    safe = np.where(ok, den_r.value, 1.0)
    val = np.where(ok, num_r.value / safe, 0.0)
    err = np.where(ok, (num_r.error + np.abs(val) * den_r.error) / safe, 0.0)
    return val, err


def drift_tau_rho(params: ModelParams, scenario: SimulatedScenario, rho: Injection, g: GFunction = GFunction(), grid=None, cfg: QuadratureConfig | None = None) -> DriftPath:
    """Drift of ``L^g M`` in the progressive enlargement by ``tau_rho``."""
    rho = tuple(rho)
    grid = _check_drift_grid(params, scenario.grid if grid is None else grid)
    tau_rho = scenario.tau[[r - 1 for r in rho]]
    w_path = scenario.w_path if grid is scenario.grid else np.interp(grid, scenario.grid, scenario.w_path)
    steps = grid.size - 1
    inc, err, regime = np.zeros(steps), np.zeros(steps), np.zeros(steps, dtype=int)
    for m in range(steps):
        v, w = grid[m], float(w_path[m])
        T = _observed_subset(tau_rho, v, left=True)
        regime[m] = len(T)
        val, e = _tau_rho_rate(params, rho, g, v, w, T, [float(tau_rho[i - 1]) for i in T], cfg)
        rate = _bracket_rate(params, v, w)
        dv = grid[m + 1] - grid[m]
        inc[m], err[m] = float(val * rate * dv), float(e * rate * dv)
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    return DriftPath(grid, regime, inc, cum, err, [rho])


def _tabulated(fn, w: NDArray, table_points: int) -> NDArray:
    """Evaluate a smooth function of ``w`` through a cubic-spline table."""
    lo, hi = w.min(), w.max()
    if hi - lo < 1e-9:
        return np.full(w.size, float(np.ravel(fn(np.full(1, lo)))[0]))
    nodes = np.linspace(lo, hi, table_points)
    return CubicSpline(nodes, fn(nodes))(w)


def drift_tau_rho_batch(params: ModelParams, grid, w_paths: NDArray, tau: NDArray, rho: Injection, g: GFunction = GFunction(), cfg: QuadratureConfig | None = None, table_points: int = 65) -> NDArray:
    """Cumulative drift in the enlargement by ``tau_rho`` for many paths, shape ``(paths, len(grid))``."""
    cfg = replace(cfg or QuadratureConfig(), error_estimate=False)
    rho = tuple(rho)
    grid = _check_drift_grid(params, grid)
    w_paths = np.asarray(w_paths, dtype=float)
    tau_rho = np.asarray(tau, dtype=float)[:, [r - 1 for r in rho]]
    n_paths = w_paths.shape[0]
    inc = np.zeros((n_paths, grid.size - 1))
    for m in range(grid.size - 1):
        v = grid[m]
        w = w_paths[:, m]
        seen = tau_rho < v
        codes = seen @ (1 << np.arange(len(rho)))
        for code in np.unique(codes):
            sel = np.flatnonzero(codes == code)
            T = tuple(i + 1 for i in range(len(rho)) if code >> i & 1)
            if not T:
                vals = _tabulated(lambda x: _tau_rho_rate(params, rho, g, v, x, (), [], cfg)[0], w[sel], table_points)
            else:
                pins = [tau_rho[sel, i - 1] for i in T]
                vals = _tau_rho_rate(params, rho, g, v, w[sel], T, pins, cfg)[0]
            inc[sel, m] = vals * _bracket_rate(params, v, w[sel]) * (grid[m + 1] - v)
    return np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)


@dataclass(frozen=True)
class RateTerms:
    """Per-injection pieces of the sorted-time drift rate at one time."""

    num: NDArray      # (batch, injections): integrals of u with zeta_rho
    den: NDArray      # integrals of a with zeta_rho
    wnum: NDArray     # integrals of the rho-restricted symmetrised density
    wden: NDArray     # integrals of the full symmetrised density
    error: NDArray    # (batch,)

    def ratios(self) -> NDArray:
        return np.where(self.den > DENOM_FLOOR, self.num / np.where(self.den > DENOM_FLOOR, self.den, 1.0), 0.0)

    def weights(self) -> NDArray:
        ok = self.wden > DENOM_FLOOR
        return np.where(ok, self.wnum / np.where(ok, self.wden, 1.0), 0.0)

    def rate(self, weight_mode: str = "exact") -> NDArray:
        if weight_mode == "exact":
            return np.sum(self.ratios() * self.weights(), axis=-1)
        if weight_mode == "swap":
            # negative control: the restricted weight replaced by the full one
            return np.sum(self.ratios(), axis=-1)
        raise ValueError(f"unknown weight mode {weight_mode!r}")


def rate_terms(params: ModelParams, k: int, t: float, w, pinned_sorted: Sequence, cfg: QuadratureConfig | None = None, literal_weights: bool = True) -> RateTerms:
    """All integrals entering the sorted-time drift rate in regime ``j = len(pinned_sorted)``.

    ``w`` and each entry of ``pinned_sorted`` may be arrays over a batch.
    With ``literal_weights`` off, each weight numerator is taken equal to the
    mass of ``a`` on the injection's region, which is what the permutation sum
    reduces to; the literal sum is kept for verification.
    """
    n = params.n
    factorial_guard(n)
    j = len(pinned_sorted)
    if j > k:
        raise ValueError("more observed times than selected")
    threshold = t if j < k else None
    injections = enumerate_injections(k, n)
    nums, dens, wnums, errs = [], [], [], []
    for rho in injections:
        pinned = {rho[i]: pinned_sorted[i] for i in range(j)}
        boxes: dict = {}
        if threshold is not None:
            _intersect(boxes, rho[j], threshold, math.inf)
        rest = tuple(c for c in range(1, n + 1) if c not in rho)
        res = marginalize_many(params, MarginalQuery(t, w, pinned, tuple(rho), rest, boxes), ("u", "a"), cfg)
        num, den = res["u"], res["a"]
        if literal_weights:
            wn = sum(
                marginalize(params, _perm_query(pi, j, k, t, w, pinned_sorted, threshold), cfg).value
                for pi in fixing_permutations(rho, n)
            )
        else:
            wn = den.value
        nums.append(num.value)
        dens.append(den.value)
        wnums.append(wn)
        errs.append(num.error + den.error)
    wden = sum(wnums)  # the fixing-permutation classes partition the symmetric group
    stack = lambda xs: np.stack(np.broadcast_arrays(*xs), axis=-1)
    num_a, den_a, wnum_a = stack(nums), stack(dens), stack(wnums)
    err = np.max(stack(errs) / np.where(den_a > DENOM_FLOOR, den_a, 1.0), axis=-1)
    return RateTerms(num_a, den_a, wnum_a, np.broadcast_to(np.asarray(wden)[..., None], wnum_a.shape), err)


def full_symmetrized_mass(params: ModelParams, t: float, w, pinned_sorted: Sequence, k: int, cfg: QuadratureConfig | None = None) -> NDArray:
    """Denominator of the weights computed literally over all ``n!`` permutations."""
    j = len(pinned_sorted)
    threshold = t if j < k else None
    return sum(
        marginalize(params, _perm_query(pi, j, k, t, w, pinned_sorted, threshold), cfg).value
        for pi in all_permutations(params.n)
    )


def _regimes(sorted_k: NDArray, v: float) -> NDArray:
    return np.count_nonzero(sorted_k < v, axis=-1)


def drift_sorted(params: ModelParams, scenario: SimulatedScenario, k: int, grid=None, cfg: QuadratureConfig | None = None, weight_mode: str = "exact") -> DriftPath:
    """Drift of ``M`` in the enlargement by the ``k`` smallest times, one path."""
    grid = _check_drift_grid(params, scenario.grid if grid is None else grid)
    w_path = scenario.w_path if grid is scenario.grid else np.interp(grid, scenario.grid, scenario.w_path)
    sorted_k = np.sort(scenario.tau)[:k]
    steps = grid.size - 1
    injections = enumerate_injections(k, params.n)
    inc, err = np.zeros(steps), np.zeros(steps)
    regime = np.zeros(steps, dtype=int)
    ratios = np.zeros((steps, len(injections)))
    weights = np.zeros((steps, len(injections)))
    flags = []
    for m in range(steps):
        v, w = grid[m], float(w_path[m])
        j = int(_regimes(sorted_k, v))
        assert 0 <= j <= k
        regime[m] = j
        terms = rate_terms(params, k, v, w, [float(x) for x in sorted_k[:j]], cfg)
        if np.any(terms.den <= DENOM_FLOOR):
            flags.append((m, "zero denominator"))
        ratios[m], weights[m] = terms.ratios(), terms.weights()
        rate = float(terms.rate(weight_mode)) * float(_bracket_rate(params, v, w))
        dv = grid[m + 1] - grid[m]
        inc[m] = rate * dv
        err[m] = float(terms.error) * abs(float(_bracket_rate(params, v, w))) * dv
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    return DriftPath(grid, regime, inc, cum, err, injections, ratios, weights, flags)


def drift_sorted_batch(
    params: ModelParams,
    grid,
    w_paths: NDArray,
    tau: NDArray,
    k: int,
    cfg: QuadratureConfig | None = None,
    weight_mode: str = "exact",
    table_points: int = 65,
) -> NDArray:
    """Cumulative sorted-time drift for many paths, shape ``(paths, len(grid))``.

    Before any time is observed the rate depends on ``W_v`` only, so it is
    tabulated on a grid of ``table_points`` values and interpolated with a
    cubic spline.  Later regimes are evaluated path by path in vectorised form.
    Weight numerators use the reduced form and the coarse error pass is skipped.
    """
    cfg = replace(cfg or QuadratureConfig(), error_estimate=False)
    grid = _check_drift_grid(params, grid)
    w_paths = np.asarray(w_paths, dtype=float)
    sorted_k = np.sort(np.asarray(tau, dtype=float), axis=-1)[:, :k]
    n_paths = w_paths.shape[0]
    inc = np.zeros((n_paths, grid.size - 1))
    for m in range(grid.size - 1):
        v = grid[m]
        dv = grid[m + 1] - v
        w = w_paths[:, m]
        reg = _regimes(sorted_k, v)
        for j in range(k + 1):
            sel = np.flatnonzero(reg == j)
            if sel.size == 0:
                continue
            if j == 0:
                vals = _tabulated(lambda x: rate_terms(params, k, v, x, [], cfg, literal_weights=False).rate(weight_mode), w[sel], table_points)
            else:
                pins = [sorted_k[sel, i] for i in range(j)]
                vals = rate_terms(params, k, v, w[sel], pins, cfg, literal_weights=False).rate(weight_mode)
            inc[sel, m] = vals * _bracket_rate(params, v, w[sel]) * dv
    return np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)


def classical_single_time_drift(params: ModelParams, grid, w_path, tau: float) -> NDArray:
    """Cumulative drift of ``M`` when a single lognormal time is revealed progressively.

    Before the time: ``d/dw log P(tau > v | W_v = w)``; after it:
    ``d/dw log`` of the conditional density at the realised value.  Both are
    closed forms for one lognormal coordinate and do not use the integrator.
    """
    if params.n != 1:
        raise ValueError("the classical formula is for a single time")
    grid = _check_drift_grid(params, grid)
    w_path = np.asarray(w_path, dtype=float)
    mu, s, r = params.mu[0], params.sigma[0], params.rho[0]
    b = s * r
    inc = np.zeros(grid.size - 1)
    for m in range(grid.size - 1):
        v, w = grid[m], w_path[m]
        mean = mu + b * w
        sd = s * math.sqrt(1.0 - r**2 * v)
        if tau > v:
            z = (mean - math.log(v)) / sd if v > 0 else math.inf
            surv = ndtr(z)
            dens = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) if math.isfinite(z) else 0.0
            score = b * dens / (sd * surv) if surv > 0 else 0.0
        else:
            score = b * (math.log(tau) - mean) / sd**2
        h = float(martingale_gradient(params, v, w))
        inc[m] = score * h * (grid[m + 1] - v)
    return np.concatenate([[0.0], np.cumsum(inc)])
