"""Ordering and selection machinery for families of random times.

Times live in ``[0, inf]``; the value ``INFINITY`` (IEEE ``inf``) plays the
role of "not yet happened" and compares exactly.  Indices exposed by this
module are 1-based, matching the usual notation ``I_n = {1, ..., n}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INFINITY = math.inf

Injection = tuple[int, ...]
Permutation = tuple[int, ...]


def cap(a: float, b: float) -> float:
    """``a`` if ``a <= b`` else ``INFINITY``."""
    return a if a <= b else INFINITY


def cap_array(a, b):
    """Vectorised :func:`cap`; broadcasts ``a`` against ``b``."""
    a = np.asarray(a, dtype=float)
    return np.where(a <= b, a, INFINITY)


@dataclass(frozen=True)
class RankResult:
    ranks: tuple[int, ...]
    inverse: tuple[int, ...]
    sorted: tuple[float, ...]


def rank_and_sort(a: Sequence[float]) -> RankResult:
    """Rank each ``(a_i, i)`` in lexicographic order and re-order increasingly.

    ``ranks[i-1]`` counts the values strictly below ``a_i`` plus the equal
    values with a smaller index, plus one.  ``inverse`` maps a rank back to
    its index and ``sorted[j-1] = a[inverse[j-1]-1]``.
    """
    k = len(a)
    ranks = []
    for i in range(k):
        below = sum(1 for j in range(k) if a[j] < a[i])
        tied_before = sum(1 for j in range(i) if a[j] == a[i])
        ranks.append(below + tied_before + 1)
    inverse = [0] * k
    for i, r in enumerate(ranks):
        inverse[r - 1] = i + 1
    return RankResult(
        ranks=tuple(ranks),
        inverse=tuple(inverse),
        sorted=tuple(float(a[i - 1]) for i in inverse),
    )


def sorted_times(tau: np.ndarray, k: int | None = None) -> np.ndarray:
    """Increasing re-ordering along the last axis, truncated to the first ``k``.

    Ties are broken by index (stable sort), which is the same rule as
    :func:`rank_and_sort`.
    """
    tau = np.asarray(tau, dtype=float)
    out = np.sort(tau, axis=-1, kind="stable")
    return out if k is None else out[..., :k]


def enumerate_injections(k: int, n: int) -> list[Injection]:
    """All injections ``I_k -> I_n`` as image tuples, in lexicographic order."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return list(itertools.permutations(range(1, n + 1), k))


def _validate_injection(rho: Sequence[int], n: int) -> None:
    if len(set(rho)) != len(rho) or any(not 1 <= r <= n for r in rho):
        raise ValueError(f"{tuple(rho)} is not an injection into 1..{n}")


def d_rho_holds(tau: Sequence[float], rho: Injection) -> bool:
    """Whether the ``k`` smallest times coincide with ``tau_rho`` in order."""
    k = len(rho)
    head = rank_and_sort(list(tau)).sorted[:k]
    return all(head[i] == tau[rho[i] - 1] for i in range(k))


def partition_label(tau: Sequence[float], k: int) -> Injection:
    """First injection (lexicographic order) realising the ``k`` smallest times."""
    n = len(tau)
    for rho in enumerate_injections(k, n):
        if d_rho_holds(tau, rho):
            return rho
    raise AssertionError("no injection realises the order statistics")  # unreachable


def partition_labels(tau: np.ndarray, k: int) -> np.ndarray:
    """Vectorised :func:`partition_label` over rows of ``tau`` (shape ``(m, n)``).

    Returns the 0-based position of the label in ``enumerate_injections(k, n)``.
    """
    tau = np.asarray(tau, dtype=float)
    n = tau.shape[-1]
    head = sorted_times(tau, k)
    labels = np.full(tau.shape[:-1], -1, dtype=np.int64)
    for idx, rho in enumerate(enumerate_injections(k, n)):
        hit = np.all(tau[..., [r - 1 for r in rho]] == head, axis=-1)
        labels = np.where((labels < 0) & hit, idx, labels)
    assert np.all(labels >= 0)
    return labels


def fixing_permutations(rho: Injection, n: int) -> list[Permutation]:
    """Permutations ``pi`` of ``I_n`` (as tuples ``(pi(1), ..., pi(n))``) with
    ``pi(rho(i)) = i`` for every ``i <= k``."""
    _validate_injection(rho, n)
    k = len(rho)
    rest_src = [m for m in range(1, n + 1) if m not in rho]
    out = []
    for images in itertools.permutations(range(k + 1, n + 1)):
        pi = [0] * n
        for i, r in enumerate(rho, start=1):
            pi[r - 1] = i
        for m, img in zip(rest_src, images):
            pi[m - 1] = img
        out.append(tuple(pi))
    return out


def all_permutations(n: int) -> list[Permutation]:
    return list(itertools.permutations(range(1, n + 1)))


def inverse_permutation(pi: Permutation) -> Permutation:
    inv = [0] * len(pi)
    for m, img in enumerate(pi, start=1):
        inv[img - 1] = m
    return tuple(inv)


def apply_permutation(pi: Permutation, x):
    """``pi(x) = (x_{pi(1)}, ..., x_{pi(n)})`` along the last axis."""
    x = np.asarray(x)
    return x[..., [p - 1 for p in pi]]


def sorted_level_set_union(a: Sequence[float], j: int, t: float) -> bool:
    """``{a_h <= t for all h in I}`` for some ``I`` with ``#I = j``.

    The right-hand side of the level-set identity for the ``j``-th smallest
    value; equals ``sorted(a)[j-1] <= t``.
    """
    k = len(a)
    return any(all(a[h] <= t for h in idx) for idx in itertools.combinations(range(k), j))


def factorial_guard(n: int, limit: int = 6) -> None:
    if n > limit:
        raise ValueError(
            f"n={n} exceeds the enumeration limit {limit} ({math.factorial(n)} permutations); "
            "use the Monte Carlo backend instead"
        )
