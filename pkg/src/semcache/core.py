"""Ground-truth domain types and the loss/decision engine.

A query universe is a finite set of m queries with embeddings, arrival
probabilities p (summing to one) and expected serving costs c in (0, 1].
A cache holds up to k query ids; serving a query from the cache costs the
semantic mismatch distance to its nearest cached neighbour, while a fresh
model call costs c(q).  Everything downstream (solvers, learners, the
simulation harness) is built on the expected-loss function defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

METRIC_KINDS = ("euclidean", "cosine", "threshold")

#: Tolerance used by tests/assertions when comparing losses for equality.
LOSS_TOL = 1e-12


def _normalize_offdiag(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize the off-diagonal entries of a raw distance matrix.

    The smallest off-diagonal distance maps to 0 and the largest to 1; the
    diagonal stays exactly 0.  If every off-diagonal distance is equal they
    all map to 1 (the matrix carries no usable scale).
    """
    m = raw.shape[0]
    out = np.zeros_like(raw, dtype=np.float64)
    if m < 2:
        return out
    off = ~np.eye(m, dtype=bool)
    lo = raw[off].min()
    hi = raw[off].max()
    if hi == lo:
        out[off] = 1.0
    else:
        out[off] = (raw[off] - lo) / (hi - lo)
    return out


def _pairwise_euclidean(embeddings: np.ndarray) -> np.ndarray:
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    raw = np.sqrt((diff * diff).sum(axis=2))
    return 0.5 * (raw + raw.T)  # exact symmetry


@dataclass(frozen=True)
class DistanceMetric:
    """A normalized pairwise distance matrix plus the recipe that built it.

    ``matrix`` is symmetric, zero on the diagonal and bounded by [0, 1].
    The threshold variant is binary: entry 0 iff the raw Euclidean distance
    is at most ``epsilon``.
    """

    kind: str
    matrix: np.ndarray = field(repr=False)
    epsilon: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        d = np.asarray(self.matrix, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.array_equal(d, d.T):
            raise ValueError("distance matrix must be symmetric")
        if np.diag(d).any():
            raise ValueError("distance matrix must be zero on the diagonal")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("distances must lie in [0, 1] after normalization")
        if self.kind == "threshold":
            if self.epsilon is None or self.epsilon < 0:
                raise ValueError("threshold metric requires epsilon >= 0")
            if not np.isin(d, (0.0, 1.0)).all():
                raise ValueError("threshold distances must be 0 or 1")
        object.__setattr__(self, "matrix", d)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def euclidean(cls, embeddings: np.ndarray) -> "DistanceMetric":
        """Pairwise Euclidean distances, min-max normalized off-diagonal."""
        raw = _pairwise_euclidean(np.asarray(embeddings, dtype=np.float64))
        return cls("euclidean", _normalize_offdiag(raw))

    @classmethod
    def cosine(cls, embeddings: np.ndarray) -> "DistanceMetric":
        """One minus cosine similarity, then min-max normalized.

        The cosine expression is a similarity; the loss model needs a
        distance where smaller means more similar, hence the 1 - sim flip
        before normalization.
        """
        e = np.asarray(embeddings, dtype=np.float64)
        norms = np.linalg.norm(e, axis=1)
        if (norms == 0.0).any():
            raise ValueError("cosine metric undefined for zero-norm embeddings")
        sim = (e @ e.T) / np.outer(norms, norms)
        raw = 1.0 - sim
        raw = 0.5 * (raw + raw.T)
        np.fill_diagonal(raw, 0.0)
        return cls("cosine", _normalize_offdiag(raw))

    @classmethod
    def threshold(cls, embeddings: np.ndarray, epsilon: float) -> "DistanceMetric":
        """Binary distance: 0 iff raw Euclidean distance <= epsilon.

        epsilon = 0 yields exact matching (0 on the diagonal, 1 between any
        two distinct embeddings).
        """
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        raw = _pairwise_euclidean(np.asarray(embeddings, dtype=np.float64))
        d = np.where(raw <= epsilon, 0.0, 1.0)
        np.fill_diagonal(d, 0.0)
        return cls("threshold", d, epsilon=float(epsilon))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, kind: str = "euclidean",
                    epsilon: Optional[float] = None) -> "DistanceMetric":
        """Wrap an explicit pre-normalized matrix (test fixtures, ingestion)."""
        return cls(kind, np.asarray(matrix, dtype=np.float64), epsilon=epsilon)


@dataclass(frozen=True)
class Cache:
    """An ordered set of at most k cached query ids.

    Members are stored in ascending index order, which makes equality,
    serialization and tie-breaking deterministic.
    """

    members: tuple[int, ...]

    def __post_init__(self) -> None:
        ms = tuple(sorted(int(q) for q in self.members))
        if len(set(ms)) != len(ms):
            raise ValueError("cache members must be distinct")
        if ms and ms[0] < 0:
            raise ValueError("cache members must be non-negative query ids")
        object.__setattr__(self, "members", ms)

    @classmethod
    def of(cls, members: Iterable[int]) -> "Cache":
        return cls(tuple(members))

    @classmethod
    def empty(cls) -> "Cache":
        return cls(())

    @property
    def size(self) -> int:
        return len(self.members)

    def indices(self) -> np.ndarray:
        return np.asarray(self.members, dtype=np.int64)

    def __contains__(self, q: int) -> bool:
        return q in self.members

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)


@dataclass(eq=False)
class QuerySpace:
    """The ground-truth universe: embeddings, arrivals, costs and metric."""

    embeddings: np.ndarray
    arrival_probs: np.ndarray
    costs: np.ndarray
    metric: DistanceMetric

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.arrival_probs = np.asarray(self.arrival_probs, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[1] < 1:
            raise ValueError("embeddings must be an (m, d_e) array with d_e >= 1")
        m = self.embeddings.shape[0]
        if self.arrival_probs.shape != (m,) or self.costs.shape != (m,):
            raise ValueError("arrival_probs and costs must have length m")
        if (self.arrival_probs <= 0).any() or (self.arrival_probs > 1).any():
            raise ValueError("arrival probabilities must lie in (0, 1]")
        if abs(self.arrival_probs.sum() - 1.0) > 1e-9:
            raise ValueError("arrival probabilities must sum to 1 within 1e-9")
        if (self.costs <= 0).any() or (self.costs > 1).any():
            raise ValueError("costs must lie in (0, 1]")
        if self.metric.m != m:
            raise ValueError("metric size does not match query count")

    @property
    def m(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def build(cls, embeddings: np.ndarray, arrival_probs: np.ndarray,
              costs: np.ndarray, metric: str = "euclidean",
              epsilon: Optional[float] = None) -> "QuerySpace":
        """Construct a space, computing the distance matrix from embeddings."""
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if metric == "euclidean":
            dm = DistanceMetric.euclidean(embeddings)
        elif metric == "cosine":
            dm = DistanceMetric.cosine(embeddings)
        elif metric == "threshold":
            if epsilon is None:
                raise ValueError("threshold metric requires epsilon")
            dm = DistanceMetric.threshold(embeddings, epsilon)
        else:
            raise ValueError(f"unknown metric kind {metric!r}")
        return cls(embeddings, arrival_probs, costs, dm)


class Decision(NamedTuple):
    """Outcome of the serve-or-lookup rule for a single arrival."""

    use_llm: bool
    source: Optional[int]  # cached query id when use_llm is False


def _check_query(m: int, q: int) -> None:
    if not 0 <= q < m:
        raise ValueError(f"query id {q} out of range [0, {m})")


def _check_cache(m: int, cache: Cache) -> None:
    if cache.members and cache.members[-1] >= m:
        raise ValueError(f"cache member {cache.members[-1]} out of range [0, {m})")


def cache_loss(matrix: np.ndarray, p: np.ndarray, c: np.ndarray,
               members: Iterable[int]) -> float:
    """Expected loss of a member set under arbitrary (p, c) vectors.

    This is the array-level workhorse: it places no distribution constraints
    on p and c, so learners can evaluate caches under estimated parameters.
    An empty member set costs sum(p * c) (every arrival is served fresh).
    """
    idx = np.asarray(tuple(members), dtype=np.int64)
    if idx.size == 0:
        return float(p @ c)
    dmin = matrix[:, idx].min(axis=1)
    return float(p @ np.minimum(c, dmin))


def distance_to_cache(space: QuerySpace, q: int, cache: Cache) -> float:
    """Distance from q to its nearest cached member; inf for an empty cache."""
    _check_query(space.m, q)
    _check_cache(space.m, cache)
    if cache.size == 0:
        return math.inf
    return float(space.metric.matrix[q, cache.indices()].min())


def nearest_cached(space: QuerySpace, q: int, cache: Cache) -> int:
    """Member attaining the minimum distance to q; ties go to the lowest id."""
    _check_query(space.m, q)
    _check_cache(space.m, cache)
    if cache.size == 0:
        raise ValueError("nearest_cached requires a non-empty cache")
    idx = cache.indices()
    d = space.metric.matrix[q, idx]
    return int(idx[d == d.min()].min())


def decide(space: QuerySpace, q: int, cache: Cache, cost_estimate: float) -> Decision:
    """Serve-or-lookup rule: query the model iff cost_estimate <= distance.

    Equality resolves to a fresh model call.  An empty cache has infinite
    distance, so it always forces a model call.
    """
    if cost_estimate < 0:
        raise ValueError("cost_estimate must be >= 0")
    d = distance_to_cache(space, q, cache)
    if cost_estimate <= d:
        return Decision(use_llm=True, source=None)
    return Decision(use_llm=False, source=nearest_cached(space, q, cache))


def expected_loss(space: QuerySpace, cache: Cache) -> float:
    """Expected per-round cost of operating the cache under the serve rule.

    Each query contributes p(q) times the cheaper of a fresh call c(q) and
    the mismatch distance to the cache.  Order of cache members is
    irrelevant; the value lies in [0, 1].
    """
    _check_cache(space.m, cache)
    return cache_loss(space.metric.matrix, space.arrival_probs, space.costs,
                      cache.members)


def bipartite_loss(space: QuerySpace, cache: Cache) -> float:
    """Coverage form of the loss for threshold metrics.

    Queries within the threshold of some cached member are covered and cost
    nothing; all others pay their full expected serving cost.  Equals
    expected_loss on the same inputs and serves as its independent check.
    """
    if space.metric.kind != "threshold":
        raise ValueError("bipartite_loss requires a threshold metric")
    _check_cache(space.m, cache)
    if cache.size == 0:
        return float(space.arrival_probs @ space.costs)
    covered = (space.metric.matrix[:, cache.indices()] == 0.0).any(axis=1)
    uncovered = ~covered
    return float(space.arrival_probs[uncovered] @ space.costs[uncovered])
