"""Learning a cache from logged interaction data.

A logged record carries the cache in force, the arriving query, and the
realized serving cost when the model was invoked (absent when the cached
response was reused).  Cost estimates are penalized upward by a confidence
radius (pessimism) before the greedy solver runs; the lower-bound and
epsilon-greedy variants exist as experimental baselines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ._io import atomic_write_text
from .core import Cache, DistanceMetric, QuerySpace, expected_loss
from .errors import FormatError
from .solvers import brute_force, epsilon_greedy_cache, reverse_greedy_matrix


class OfflineRecord(NamedTuple):
    """One logged round: cache in force, arriving query, observed cost.

    observed_cost is None exactly when the cached response was served (no
    model call, hence no cost feedback); when present it lies in (0, 1].
    """

    round: int
    cache: Cache
    query: int
    observed_cost: Optional[float]


@dataclass
class OfflineEstimates:
    """Counters and confidence-bounded cost estimates from a logged dataset."""

    n: int
    arrivals: np.ndarray        # per-query arrival counts
    feedback_counts: np.ndarray  # per-query cost observations
    p_hat: np.ndarray
    c_hat: np.ndarray
    c_upper: np.ndarray         # pessimistic cost estimate, clipped to [0, 1]
    c_lower: np.ndarray         # optimistic cost estimate, clipped to [0, 1]


def estimate(dataset: Sequence[OfflineRecord], m: int,
             delta: float = 0.05) -> OfflineEstimates:
    """Empirical means plus confidence bounds of width sqrt(log(6mn/d)/2N).

    Queries with no cost feedback get the maximally uncertain bounds:
    upper 1, lower 0.
    """
    n = len(dataset)
    if n < 1:
        raise ValueError("dataset must contain at least one record")
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    qs = np.fromiter((r.query for r in dataset), dtype=np.int64, count=n)
    if qs.min() < 0 or qs.max() >= m:
        raise ValueError(f"query id out of range [0, {m})")
    obs = np.fromiter(
        (np.nan if r.observed_cost is None else r.observed_cost for r in dataset),
        dtype=np.float64, count=n)
    has = ~np.isnan(obs)
    arrivals = np.bincount(qs, minlength=m).astype(np.int64)
    feedback = np.bincount(qs[has], minlength=m).astype(np.int64)
    sums = np.bincount(qs[has], weights=obs[has], minlength=m)
    seen = feedback > 0
    c_hat = np.zeros(m)
    c_hat[seen] = sums[seen] / feedback[seen]
    radius = np.zeros(m)
    radius[seen] = np.sqrt(math.log(6.0 * m * n / delta) / (2.0 * feedback[seen]))
    c_upper = np.where(seen, np.minimum(1.0, c_hat + radius), 1.0)
    c_lower = np.where(seen, np.maximum(0.0, c_hat - radius), 0.0)
    return OfflineEstimates(n=n, arrivals=arrivals, feedback_counts=feedback,
                            p_hat=arrivals / n, c_hat=c_hat,
                            c_upper=c_upper, c_lower=c_lower)


def cucb_sc(dataset: Sequence[OfflineRecord], metric: DistanceMetric, k: int,
            delta: float = 0.05) -> Cache:
    """Pessimistic offline learner: greedy solve under upper-bounded costs."""
    est = estimate(dataset, metric.m, delta)
    return reverse_greedy_matrix(metric.matrix, est.p_hat, est.c_upper, k).cache


def clcb_sc_offline(dataset: Sequence[OfflineRecord], metric: DistanceMetric,
                    k: int, delta: float = 0.05) -> Cache:
    """Optimistic variant: identical pipeline with lower-bounded costs."""
    est = estimate(dataset, metric.m, delta)
    return reverse_greedy_matrix(metric.matrix, est.p_hat, est.c_lower, k).cache


def epsilon_greedy_offline(dataset: Sequence[OfflineRecord],
                           metric: DistanceMetric, k: int,
                           epsilon_g: float = 0.2, seed: int = 0) -> Cache:
    """Greedy on raw empirical costs, with random evictions at rate epsilon_g."""
    est = estimate(dataset, metric.m)
    rng = np.random.default_rng(seed)
    return epsilon_greedy_cache(metric.matrix, est.p_hat, est.c_hat, k,
                                epsilon_g, rng)


def suboptimality_gap(space: QuerySpace, cache: Cache, alpha: float = 1.0,
                      budget: int = 10_000_000) -> float:
    """Excess loss of a cache over alpha times the exact optimum of equal size.

    With alpha = 1 this is a plain optimality gap (non-negative); with the
    greedy ratio as alpha the reference weakens and the gap may be negative.
    """
    if cache.size < 1:
        raise ValueError("suboptimality gap requires a non-empty cache")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    ref = brute_force(space, cache.size, budget=budget)
    return expected_loss(space, cache) - alpha * ref.loss


def save_dataset(records: Sequence[OfflineRecord], path: str) -> None:
    """Write records as JSON lines: {"t", "cache", "q", "cost"}."""
    lines = []
    for r in records:
        lines.append(json.dumps({"t": r.round, "cache": list(r.cache.members),
                                 "q": r.query, "cost": r.observed_cost}))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path: str, m: Optional[int] = None) -> list[OfflineRecord]:
    """Parse a JSON-lines dataset, rejecting malformed or out-of-range records."""
    records: list[OfflineRecord] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                t = int(row["t"])
                members = [int(q) for q in row["cache"]]
                q = int(row["q"])
                cost = row["cost"]
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: missing or malformed field "
                                  f"({exc})") from exc
            if cost is not None:
                cost = float(cost)
                if cost <= 0.0 or cost > 1.0:
                    raise FormatError(f"{path}:{lineno}: field 'cost' must lie in "
                                      f"(0, 1], got {cost}")
            if q < 0 or (m is not None and q >= m):
                raise FormatError(f"{path}:{lineno}: field 'q' out of range")
            if m is not None and members and max(members) >= m:
                raise FormatError(f"{path}:{lineno}: cache member out of range")
            records.append(OfflineRecord(round=t, cache=Cache.of(members),
                                         query=q, observed_cost=cost))
    if not records:
        raise FormatError(f"{path}: dataset contains no records")
    return records
