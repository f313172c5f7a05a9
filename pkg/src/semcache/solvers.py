"""Cache optimization with known parameters.

Removing one item at a time from the full universe (reverse greedy) gives an
approximation guarantee governed by the curvature of the loss; brute force
enumeration provides the exact reference on small instances; a frequency
top-k baseline rounds out the comparison set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import Cache, QuerySpace, cache_loss
from .errors import BudgetExceededError, DegenerateInstanceError

_BRUTE_FORCE_BUDGET = 10_000_000
_CHUNK = 4096


def _removal_argmin(D, p, c, alive):
    """Pick the member whose removal minimizes the loss over the survivors.

    For each query the nearest and second-nearest alive members are tracked,
    so a candidate's removal loss is the base loss with its "owned" rows
    bumped to their second-nearest option.  Exact ties evict the highest
    index, keeping the surviving set lexicographically smallest.
    """
    m = D.shape[0]
    delta = np.zeros(m)
    base = 0.0
    for q in range(m):
        m1 = np.inf
        m2 = np.inf
        own = -1
        for j in range(m):
            if alive[j]:
                d = D[q, j]
                if d < m1:
                    m2 = m1
                    m1 = d
                    own = j
                elif d < m2:
                    m2 = d
        cq = c[q]
        a = p[q] * (cq if cq < m1 else m1)
        b = p[q] * (cq if cq < m2 else m2)
        base += a
        delta[own] += b - a
    best_j = -1
    best = np.inf
    for j in range(m):
        if alive[j]:
            lj = base + delta[j]
            if lj <= best:
                best = lj
                best_j = j
    return best_j, best


def _rg_alive(D, p, c, k):
    """Survivor mask after greedily removing down to k members."""
    m = D.shape[0]
    alive = np.ones(m, np.bool_)
    n_alive = m
    while n_alive > k:
        j, _ = _removal_argmin(D, p, c, alive)
        alive[j] = False
        n_alive -= 1
    return alive


try:  # hot path: the online every-round variants call this ~T times per run
    from numba import njit as _njit

    _removal_argmin = _njit(cache=True)(_removal_argmin)
    _rg_alive = _njit(cache=True)(_rg_alive)
except ImportError:  # pragma: no cover - numba is a declared dependency
    pass


@dataclass(frozen=True)
class SolverResult:
    cache: Cache
    loss: float
    evaluations: int


@dataclass(frozen=True)
class CurvatureReport:
    """Deviation of the loss from additivity and the implied greedy ratio."""

    curvature: float        # in [0, 1]; 0 for an additive loss
    beta: float             # curvature / (1 - curvature); inf at curvature 1
    approx_ratio: float     # (e^beta - 1) / beta; 1 at beta 0; inf at curvature 1


def _check_k(m: int, k: int) -> None:
    if not 1 <= k <= m:
        raise ValueError(f"cache size k={k} out of range [1, {m}]")


def reverse_greedy_matrix(matrix: np.ndarray, p: np.ndarray, c: np.ndarray,
                          k: int) -> SolverResult:
    """Reverse greedy on explicit (distance matrix, p, c) arrays.

    Learners call this with estimated parameters, which need not satisfy the
    QuerySpace invariants (probabilities may not sum to one, costs may be 0).
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    m = matrix.shape[0]
    _check_k(m, k)
    alive = _rg_alive(matrix, p, c, k)
    cache = Cache.of(np.flatnonzero(alive))
    loss = cache_loss(matrix, p, c, cache.members)
    evaluations = (m * (m + 1) - k * (k + 1)) // 2
    return SolverResult(cache=cache, loss=loss, evaluations=evaluations)


def reverse_greedy(space: QuerySpace, k: int) -> SolverResult:
    """Start from all queries cached and evict the least useful until k remain."""
    return reverse_greedy_matrix(space.metric.matrix, space.arrival_probs,
                                 space.costs, k)


def brute_force(space: QuerySpace, k: int,
                budget: int = _BRUTE_FORCE_BUDGET) -> SolverResult:
    """Exact minimizer over all size-k member sets.

    Size-exactly-k suffices because the loss never increases when the cache
    grows.  Ties resolve to the lexicographically smallest member list.
    """
    m = space.m
    _check_k(m, k)
    n_subsets = math.comb(m, k)
    if n_subsets > budget:
        raise BudgetExceededError(
            f"C({m},{k}) = {n_subsets} subsets exceeds budget {budget}")
    D = space.metric.matrix
    p = space.arrival_probs
    c = space.costs
    best_loss = np.inf
    best: tuple[int, ...] = ()
    combos = itertools.combinations(range(m), k)
    while True:
        chunk = list(itertools.islice(combos, _CHUNK))
        if not chunk:
            break
        idx = np.asarray(chunk, dtype=np.int64)          # (B, k)
        dmin = D[:, idx].min(axis=2)                     # (m, B)
        losses = p @ np.minimum(c[:, None], dmin)        # (B,)
        i = int(np.argmin(losses))
        if losses[i] < best_loss:
            best_loss = float(losses[i])
            best = chunk[i]
    cache = Cache.of(best)
    return SolverResult(cache=cache,
                        loss=cache_loss(D, p, c, cache.members),
                        evaluations=n_subsets)


def curvature(space: QuerySpace) -> CurvatureReport:
    """How far the loss deviates from additivity, and the greedy ratio.

    curvature = 1 - min_q [loss(all but q) - loss(all)] / [loss(none) - loss({q})].
    An additive loss (exact matching) has curvature 0 and ratio 1; a fully
    shadowed query (removal changes nothing) drives curvature to 1 and the
    ratio to infinity.
    """
    m = space.m
    if m < 2:
        raise ValueError("curvature requires at least 2 queries")
    D = space.metric.matrix
    p = space.arrival_probs
    c = space.costs
    loss_empty = float(p @ c)
    loss_full = cache_loss(D, p, c, range(m))
    singles = p @ np.minimum(c[:, None], D)              # loss({q}) per q
    offdiag = D + np.diag(np.full(m, np.inf))
    drop_one = p * np.minimum(c, offdiag.min(axis=1))    # loss(all but q) per q
    denom = loss_empty - singles
    if denom.min() <= 0.0:
        q = int(np.argmin(denom))
        raise DegenerateInstanceError(
            f"loss(none) - loss({{{q}}}) = {denom[q]} is not positive; "
            "curvature ratio undefined for this instance")
    ratio = (drop_one - loss_full) / denom
    curv = min(1.0, max(0.0, 1.0 - float(ratio.min())))
    if curv >= 1.0:
        return CurvatureReport(curvature=1.0, beta=math.inf, approx_ratio=math.inf)
    beta = curv / (1.0 - curv)
    if beta == 0.0:
        alpha = 1.0
    elif beta > 700.0:  # exp would overflow
        alpha = math.inf
    else:
        alpha = math.expm1(beta) / beta
    return CurvatureReport(curvature=curv, beta=beta, approx_ratio=alpha)


def lfu_cache(space_or_frequencies: Union[QuerySpace, np.ndarray], k: int) -> Cache:
    """Top-k queries by frequency; ties keep the lowest index."""
    if isinstance(space_or_frequencies, QuerySpace):
        freq = space_or_frequencies.arrival_probs
    else:
        freq = np.asarray(space_or_frequencies, dtype=np.float64)
    _check_k(freq.shape[0], k)
    order = np.argsort(-freq, kind="stable")
    return Cache.of(order[:k])


def epsilon_greedy_cache(matrix: np.ndarray, p: np.ndarray, c: np.ndarray,
                         k: int, epsilon: float, rng: np.random.Generator) -> Cache:
    """Reverse greedy where each removal step goes random with prob epsilon."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    m = matrix.shape[0]
    _check_k(m, k)
    alive = np.ones(m, np.bool_)
    for n_alive in range(m, k, -1):
        if rng.random() < epsilon:
            pos = int(rng.integers(n_alive))
            j = int(np.flatnonzero(alive)[pos])
        else:
            j, _ = _removal_argmin(matrix, p, c, alive)
        alive[j] = False
    return Cache.of(np.flatnonzero(alive))
