"""Exact probability calculus on finite spaces.

A sigma-algebra on a finite space is represented by the partition into its
atoms, stored as an integer label per atom.  A filtration is a refining
sequence of such partitions on a discrete time grid, and a process is a
``(time, atom)`` matrix.  Time is discrete: "predictable at ``t_j``" means
measurable at ``t_{j-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-12


class FiniteSpaceError(ValueError):
    """Raised when an input violates a structural precondition."""


def _scale(x: np.ndarray) -> float:
    finite = np.abs(x[np.isfinite(x)])
    return max(1.0, float(finite.max())) if finite.size else 1.0


@dataclass(frozen=True, eq=False)
class FiniteProbSpace:
    prob: np.ndarray
    atoms: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.prob, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise FiniteSpaceError("probabilities must be a non-empty vector")
        if np.any(p <= 0):
            raise FiniteSpaceError("every atom must carry strictly positive probability")
        if abs(p.sum() - 1.0) > TOL * p.size:
            raise FiniteSpaceError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "prob", p)
        if not self.atoms:
            object.__setattr__(self, "atoms", tuple(range(p.size)))
        elif len(self.atoms) != p.size:
            raise FiniteSpaceError("one identifier per atom required")

    @property
    def size(self) -> int:
        return self.prob.size

    def expect(self, x) -> float:
        return float(np.dot(self.prob, np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class Partition:
    """Partition of ``{0, ..., size-1}`` given by block labels ``0..nblocks-1``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise FiniteSpaceError("labels must be one per atom")
        # canonical labelling: blocks numbered by first appearance
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        object.__setattr__(self, "labels", order[inv.reshape(-1)].astype(np.int64))

    @classmethod
    def trivial(cls, size: int) -> "Partition":
        return cls(np.zeros(size, dtype=np.int64))

    @classmethod
    def discrete(cls, size: int) -> "Partition":
        return cls(np.arange(size))

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], size: int) -> "Partition":
        labels = np.full(size, -1, dtype=np.int64)
        for b, block in enumerate(blocks):
            idx = np.fromiter(block, dtype=np.int64)
            if idx.size == 0:
                raise FiniteSpaceError("empty block")
            if np.any(labels[idx] >= 0):
                raise FiniteSpaceError("blocks overlap")
            labels[idx] = b
        if np.any(labels < 0):
            raise FiniteSpaceError("blocks do not cover every atom")
        return cls(labels)

    @classmethod
    def generated_by(cls, *keys) -> "Partition":
        """Coarsest partition making every key (an atom-indexed array) constant."""
        cols = [np.asarray(k, dtype=float).reshape(len(k), -1) for k in keys]
        stacked = np.concatenate(cols, axis=1)
        # inf compares equal to inf, so np.unique handles "not yet happened" exactly
        _, inv = np.unique(stacked, axis=0, return_inverse=True)
        return cls(inv.reshape(-1))

    @property
    def size(self) -> int:
        return self.labels.size

    @property
    def nblocks(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def blocks(self) -> list[frozenset]:
        return [frozenset(np.flatnonzero(self.labels == b).tolist()) for b in range(self.nblocks)]

    def refines(self, coarser: "Partition") -> bool:
        pairs = np.unique(np.stack([self.labels, coarser.labels], axis=1), axis=0)
        return pairs.shape[0] == self.nblocks

    def same_as(self, other: "Partition") -> bool:
        return self.refines(other) and other.refines(self)

    def restricted(self, mask: np.ndarray) -> np.ndarray:
        """Labels of the trace partition ``{B & mask}`` on the atoms in ``mask``."""
        return self.labels[np.asarray(mask, dtype=bool)]

    def coincides_on(self, other: "Partition", mask: np.ndarray) -> bool:
        """Whether the two sigma-algebras coincide on the set ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return True
        a, b = self.labels[mask], other.labels[mask]
        pairs = np.unique(np.stack([a, b], axis=1), axis=0).shape[0]
        return pairs == np.unique(a).size == np.unique(b).size

    def is_measurable(self, x, tol: float = TOL) -> bool:
        x = np.asarray(x, dtype=float)
        _, first = np.unique(self.labels, return_index=True)
        ref = x[first][self.labels]
        both_inf = np.isinf(x) & np.isinf(ref) & (np.sign(x) == np.sign(ref))
        dev = np.where(both_inf, 0.0, np.abs(x - ref))
        return bool(np.all(dev <= tol * _scale(x)))


@dataclass(frozen=True, eq=False)
class PartitionFiltration:
    space: FiniteProbSpace
    partitions: tuple[Partition, ...]
    grid: np.ndarray = field(default=None)

    def __post_init__(self):
        parts = tuple(self.partitions)
        object.__setattr__(self, "partitions", parts)
        grid = np.arange(len(parts), dtype=float) if self.grid is None else np.asarray(self.grid, dtype=float)
        if grid.shape != (len(parts),):
            raise FiniteSpaceError("one partition per grid point required")
        if np.any(np.diff(grid) <= 0):
            raise FiniteSpaceError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        for p in parts:
            if p.size != self.space.size:
                raise FiniteSpaceError("partition size differs from the space")
        for j in range(1, len(parts)):
            if not parts[j].refines(parts[j - 1]):
                raise FiniteSpaceError(f"partition at t_{j} does not refine t_{j - 1}")

    @property
    def nsteps(self) -> int:
        return len(self.partitions) - 1

    def __len__(self) -> int:
        return len(self.partitions)

    def __getitem__(self, j: int) -> Partition:
        return self.partitions[j]

    def refines(self, coarser: "PartitionFiltration") -> bool:
        _check_grid(self, coarser)
        return all(f.refines(c) for f, c in zip(self.partitions, coarser.partitions))

    def is_adapted(self, values, tol: float = TOL) -> bool:
        values = np.asarray(values, dtype=float)
        return all(self.partitions[j].is_measurable(values[j], tol) for j in range(len(self)))


@dataclass(frozen=True, eq=False)
class AdaptedPath:
    values: np.ndarray
    filtration: PartitionFiltration

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.filtration), self.filtration.space.size):
            raise FiniteSpaceError(f"path shape {v.shape} does not match the filtration")
        object.__setattr__(self, "values", v)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


def _check_grid(a: PartitionFiltration, b: PartitionFiltration) -> None:
    if len(a) != len(b) or not np.array_equal(a.grid, b.grid):
        raise FiniteSpaceError("incompatible time grids")
    if a.space is not b.space and not np.array_equal(a.space.prob, b.space.prob):
        raise FiniteSpaceError("filtrations live on different spaces")


def _as_matrix(x, F: PartitionFiltration) -> np.ndarray:
    if isinstance(x, AdaptedPath):
        if x.filtration is not F:
            _check_grid(x.filtration, F)
        return x.values
    x = np.asarray(x, dtype=float)
    size = F.space.size
    if x.shape == (size,):
        return np.broadcast_to(x, (len(F), size)).copy()
    if x.shape == (len(F), size):
        return x
    raise FiniteSpaceError(f"values of shape {x.shape} do not match grid {len(F)} x atoms {size}")


def conditional_expectation(x, partition: Partition, space: FiniteProbSpace) -> np.ndarray:
    """Probability-weighted block averages of ``x`` over ``partition``."""
    x = np.asarray(x, dtype=float)
    p = space.prob
    mass = np.bincount(partition.labels, weights=p)
    total = np.bincount(partition.labels, weights=p * x)
    return (total / mass)[partition.labels]


def optional_projection(x, F: PartitionFiltration) -> AdaptedPath:
    vals = _as_matrix(x, F)
    out = np.stack([conditional_expectation(vals[j], F[j], F.space) for j in range(len(F))])
    return AdaptedPath(out, F)


def predictable_projection(x, F: PartitionFiltration) -> AdaptedPath:
    vals = _as_matrix(x, F)
    rows = [conditional_expectation(vals[0], F[0], F.space)]
    rows += [conditional_expectation(vals[j], F[j - 1], F.space) for j in range(1, len(F))]
    return AdaptedPath(np.stack(rows), F)


def dual_predictable_projection(v, F: PartitionFiltration) -> AdaptedPath:
    """Compensator: ``dA_j = E[dV_j | F_{t_{j-1}}]``, ``A_0 = 0``."""
    vals = _as_matrix(v, F)
    if np.any(np.abs(vals[0]) > TOL * _scale(vals)):
        raise FiniteSpaceError("finite-variation input must start at 0")
    dv = np.diff(vals, axis=0)
    da = np.stack([conditional_expectation(dv[j - 1], F[j - 1], F.space) for j in range(1, len(F))])
    out = np.vstack([np.zeros(F.space.size), np.cumsum(da, axis=0)])
    return AdaptedPath(out, F)


def martingale_deviation(m, F: PartitionFiltration) -> float:
    """Largest absolute conditional mean increment ``|E[dM_j | F_{t_{j-1}}]|``."""
    vals = _as_matrix(m, F)
    if len(F) < 2:
        return 0.0
    dm = np.diff(vals, axis=0)
    return max(
        float(np.max(np.abs(conditional_expectation(dm[j - 1], F[j - 1], F.space))))
        for j in range(1, len(F))
    )


def is_martingale(m, F: PartitionFiltration, tol: float = TOL) -> bool:
    vals = _as_matrix(m, F)
    return F.is_adapted(vals, tol) and martingale_deviation(vals, F) <= tol * _scale(vals)


def doob_decomposition(x, F: PartitionFiltration) -> tuple[AdaptedPath, AdaptedPath]:
    """Split an adapted ``x`` into martingale plus predictable drift with drift_0 = 0."""
    vals = _as_matrix(x, F)
    if not F.is_adapted(vals):
        raise FiniteSpaceError("process is not adapted to the filtration")
    dx = np.diff(vals, axis=0)
    rows = [np.zeros(F.space.size)]
    for j in range(1, len(F)):
        rows.append(rows[-1] + conditional_expectation(dx[j - 1], F[j - 1], F.space))
    drift = np.stack(rows)
    return AdaptedPath(vals - drift, F), AdaptedPath(drift, F)


def predictable_bracket(m, n, F: PartitionFiltration) -> AdaptedPath:
    """``<M, N>``: compensator of ``sum dM_j dN_j`` for two martingales."""
    mv, nv = _as_matrix(m, F), _as_matrix(n, F)
    for name, v in (("M", mv), ("N", nv)):
        if not is_martingale(v, F):
            raise FiniteSpaceError(f"{name} is not a martingale of the filtration")
    prod = np.vstack([np.zeros(F.space.size), np.cumsum(np.diff(mv, axis=0) * np.diff(nv, axis=0), axis=0)])
    return dual_predictable_projection(prod, F)


def martingale_from_terminal(xi, F: PartitionFiltration) -> AdaptedPath:
    """Closed martingale ``E[xi | F_t]``."""
    return optional_projection(np.asarray(xi, dtype=float), F)


def filtration_from_keys(space: FiniteProbSpace, keys: Sequence[Sequence[np.ndarray]], grid=None) -> PartitionFiltration:
    """Filtration whose ``j``-th partition is generated by the arrays in ``keys[j]``."""
    parts = tuple(Partition.generated_by(*ks) if len(ks) else Partition.trivial(space.size) for ks in keys)
    return PartitionFiltration(space, parts, grid)
