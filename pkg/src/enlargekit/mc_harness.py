"""Monte Carlo checks that a computed drift compensates the factor martingale.

Paths are simulated, ``X = M - drift`` is formed path by path, and for
checkpoint pairs ``s < t`` the mean of ``X_t - X_s`` is tested against zero
inside bins that only use information available at ``s``: the value of
``W_s``, how many of the observed times have occurred by ``s``, and the last
occurred time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import ndtri

from .density_model import ModelParams, density, martingale_value, simulate_batch
from .drift_engine import GFunction, drift_sorted_batch, drift_tau_rho_batch
from .marginal_integrator import QuadratureConfig

CSV_VERSION = "enlargekit-mc-bins/1"


class BinningError(RuntimeError):
    pass


@dataclass(frozen=True)
class MartingaleTestConfig:
    n_paths: int = 100_000
    steps: int = 200
    checkpoints: tuple[tuple[float, float], ...] | None = None  # default: consecutive thirds
    w_bins: int = 5
    time_bins: int = 3
    min_bin: int = 200
    level: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1 or self.steps < 1:
            raise ValueError("n_paths and steps must be positive")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.w_bins < 1 or self.time_bins < 1 or self.min_bin < 2:
            raise ValueError("bin counts must be positive and min_bin at least 2")

    def grid(self, params: ModelParams) -> NDArray:
        return np.linspace(0.0, params.t_max, self.steps + 1)

    def checkpoint_indices(self, grid: NDArray) -> list[tuple[int, int]]:
        if self.checkpoints is None:
            cuts = np.linspace(0, grid.size - 1, 4).round().astype(int)
            return [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]
        out = []
        for s, t in self.checkpoints:
            i, j = (int(np.argmin(np.abs(grid - u))) for u in (s, t))
            if abs(grid[i] - s) > 1e-9 or abs(grid[j] - t) > 1e-9:
                raise ValueError(f"checkpoint ({s}, {t}) is not on the grid")
            if i >= j:
                raise ValueError("checkpoints need s < t")
            out.append((i, j))
        return out


@dataclass(frozen=True)
class BinResult:
    s: float
    t: float
    regime: str
    w_bin: int
    time_bin: int
    count: int
    mean: float
    stderr: float
    z: float


@dataclass
class TestReport:
    name: str
    bins: list[BinResult]
    max_abs_z: float
    critical_z: float
    level: float
    passed: bool
    metadata: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {CSV_VERSION} {self.name}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s", "t", "regime", "w_bin", "time_bin", "count", "mean", "stderr", "z"])
        for b in self.bins:
            writer.writerow([repr(b.s), repr(b.t), b.regime, b.w_bin, b.time_bin, b.count, repr(b.mean), repr(b.stderr), repr(b.z)])
        return buf.getvalue()

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"test: {self.name}",
            f"verdict: {verdict}",
            f"bins: {len(self.bins)}",
            f"max |z|: {self.max_abs_z:.4f}",
            f"critical |z| (Sidak, level {self.level}): {self.critical_z:.4f}",
            "metadata: " + json.dumps(self.metadata, sort_keys=True),
        ]
        return "\n".join(lines) + "\n"


def sidak_critical(level: float, tests: int) -> float:
    """Two-sided normal critical value keeping the family-wise level over ``tests``."""
    per_test = -math.expm1(math.log1p(-level) / max(tests, 1))
    return float(-ndtri(per_test / 2.0))


def _finish(name: str, bins: list[BinResult], level: float, metadata: dict) -> TestReport:
    zs = np.array([abs(b.z) for b in bins])
    crit = sidak_critical(level, len(bins))
    max_z = float(zs.max()) if zs.size else 0.0
    return TestReport(name, bins, max_z, crit, level, bool(max_z <= crit), metadata)


class DriftProducer(Protocol):
    name: str

    def observed(self, tau: NDArray) -> NDArray:
        """Times whose occurrence is part of the information, shape (paths, m)."""

    def cumulative(self, params: ModelParams, grid: NDArray, w_paths: NDArray, tau: NDArray) -> NDArray:
        """Accumulated drift on the grid, shape (paths, len(grid))."""


@dataclass(frozen=True)
class ZeroDrift:
    """No compensation at all: the negative control in a correlated model."""

    k: int = 1
    name: str = "zero"

    def observed(self, tau):
        return np.sort(tau, axis=-1)[:, : self.k]

    def cumulative(self, params, grid, w_paths, tau):
        return np.zeros((w_paths.shape[0], grid.size))


@dataclass(frozen=True)
class SortedDrift:
    k: int = 1
    weight_mode: str = "exact"
    cfg: QuadratureConfig | None = None
    name: str = "sorted"

    def observed(self, tau):
        return np.sort(tau, axis=-1)[:, : self.k]

    def cumulative(self, params, grid, w_paths, tau):
        return drift_sorted_batch(params, grid, w_paths, tau, self.k, self.cfg, self.weight_mode)


@dataclass(frozen=True)
class TauRhoDrift:
    rho: tuple[int, ...] = (1,)
    cfg: QuadratureConfig | None = None
    name: str = "tau_rho"

    def observed(self, tau):
        return tau[:, [r - 1 for r in self.rho]]

    def cumulative(self, params, grid, w_paths, tau):
        return drift_tau_rho_batch(params, grid, w_paths, tau, self.rho, GFunction(), self.cfg)


def _quantile_labels(x: NDArray, bins: int) -> NDArray:
    if bins <= 1 or x.size == 0:
        return np.zeros(x.size, dtype=int)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def _regime_groups(regime: NDArray, max_regime: int, min_bin: int) -> list[list[int]]:
    """Adjacent regimes merged until every group holds ``min_bin`` paths."""
    groups = [[j] for j in range(max_regime + 1)]
    sizes = [int(np.count_nonzero(regime == j)) for j in range(max_regime + 1)]
    while len(groups) > 1:
        small = [i for i, c in enumerate(sizes) if c < min_bin]
        if not small:
            break
        i = min(small, key=lambda g: (sizes[g], g))
        other = i - 1 if i > 0 else i + 1
        lo, hi = sorted((i, other))
        groups[lo:hi + 1] = [groups[lo] + groups[hi]]
        sizes[lo:hi + 1] = [sizes[lo] + sizes[hi]]
    if sizes[0] < min_bin:
        raise BinningError(f"only {sizes[0]} paths available, need at least {min_bin} per bin")
    return groups


def _cells(w: NDArray, last_time: NDArray | None, cfg: MartingaleTestConfig) -> NDArray:
    """Quantile cells on ``W_s`` and the last occurred time, coarsened until
    every non-empty cell has ``min_bin`` paths."""
    wb, tb = cfg.w_bins, cfg.time_bins if last_time is not None else 1
    while True:
        wl = _quantile_labels(w, wb)
        tl = _quantile_labels(last_time, tb) if last_time is not None else np.zeros(w.size, dtype=int)
        labels = wl * (tb + 1) + tl
        counts = np.bincount(labels)
        if np.all((counts == 0) | (counts >= cfg.min_bin)) or (wb == 1 and tb == 1):
            return np.stack([wl, tl], axis=-1)
        if tb > 1:
            tb -= 1
        else:
            wb -= 1


def binned_increment_test(name: str, grid: NDArray, x: NDArray, w_paths: NDArray, observed: NDArray, cfg: MartingaleTestConfig, metadata: dict | None = None) -> TestReport:
    """Binned zero-mean test of ``x_t - x_s`` for the configured checkpoints."""
    bins = []
    for i, j in cfg.checkpoint_indices(grid):
        s, t = float(grid[i]), float(grid[j])
        occurred = observed <= s
        regime = occurred.sum(axis=-1)
        last = np.where(occurred, observed, -np.inf).max(axis=-1, initial=-np.inf)
        dx = x[:, j] - x[:, i]
        for group in _regime_groups(regime, observed.shape[1], cfg.min_bin):
            sel = np.flatnonzero(np.isin(regime, group))
            use_time = 0 not in group
            cells = _cells(w_paths[sel, i], last[sel] if use_time else None, cfg)
            for key in sorted({tuple(c) for c in cells.tolist()}):
                members = sel[np.all(cells == key, axis=-1)]
                d = dx[members]
                mean = float(d.mean())
                se = float(d.std(ddof=1) / math.sqrt(d.size))
                z = mean / se if se > 0 else (0.0 if mean == 0 else math.inf)
                bins.append(BinResult(s, t, "+".join(map(str, group)), int(key[0]), int(key[1]), int(d.size), mean, se, z))
    return _finish(name, bins, cfg.level, metadata or {})


def martingale_test(params: ModelParams, producer: DriftProducer, cfg: MartingaleTestConfig = MartingaleTestConfig()) -> TestReport:
    """Simulate, compensate with ``producer`` and test ``M - drift`` for zero conditional mean increments."""
    grid = cfg.grid(params)
    batch = simulate_batch(params, grid, cfg.n_paths, cfg.seed)
    drift = producer.cumulative(params, grid, batch.w_paths, batch.tau)
    if params.martingale == "brownian":
        m = batch.w_paths
    else:
        m = np.stack([martingale_value(params, float(v), batch.w_paths[:, i]) for i, v in enumerate(grid)], axis=1)
    meta = {
        "producer": producer.name,
        "seed": cfg.seed,
        "n_paths": cfg.n_paths,
        "steps": cfg.steps,
        "t_max": params.t_max,
        "min_bin": cfg.min_bin,
        "mu": list(params.mu),
        "sigma": list(params.sigma),
        "rho": list(params.rho),
        "martingale": params.martingale,
    }
    return binned_increment_test(producer.name, grid, m - drift, batch.w_paths, producer.observed(batch.tau), cfg, meta)


@dataclass(frozen=True)
class DensityTestConfig:
    points: int = 8
    samples: int = 20_000
    s: float = 0.3
    t: float = 0.8
    level: float = 0.01
    seed: int = 0
    residual_scale: float = 1.0   # anything but 1 mis-specifies the density


def density_martingale_test(params: ModelParams, cfg: DensityTestConfig = DensityTestConfig()) -> TestReport:
    """Check ``E[a_t(x) | W_s] = a_s(x)`` at random points ``x`` and random ``W_s``."""
    if not 0 <= cfg.s < cfg.t <= params.t_max:
        raise ValueError("need 0 <= s < t <= t_max")
    rng = np.random.default_rng(cfg.seed)
    bins = []
    for p in range(cfg.points):
        ws = math.sqrt(cfg.s) * rng.standard_normal()
        logx = params.log_mean(ws) + np.sqrt(params.log_var(cfg.s)) * rng.standard_normal(params.n)
        x = np.exp(logx)
        wt = ws + math.sqrt(cfg.t - cfg.s) * rng.standard_normal(cfg.samples)
        now = float(density(params, cfg.s, ws, x, cfg.residual_scale).a)
        later = density(params, cfg.t, wt, np.broadcast_to(x, (cfg.samples, params.n)), cfg.residual_scale).a
        diff = later - now
        se = float(diff.std(ddof=1) / math.sqrt(cfg.samples))
        mean = float(diff.mean())
        if se > 0:
            z = mean / se
        else:
            z = 0.0 if abs(mean) <= 1e-12 * max(now, 1.0) else math.inf
        bins.append(BinResult(cfg.s, cfg.t, "density", p, 0, cfg.samples, mean, se, z))
    meta = {"seed": cfg.seed, "points": cfg.points, "samples": cfg.samples, "residual_scale": cfg.residual_scale}
    return _finish("density", bins, cfg.level, meta)


def repeated_null_failures(params: ModelParams, producer: DriftProducer, cfg: MartingaleTestConfig, seeds: Sequence[int]) -> int:
    """Number of master seeds at which a correctly compensated process is rejected."""
    return sum(not martingale_test(params, producer, replace(cfg, seed=s)).passed for s in seeds)

