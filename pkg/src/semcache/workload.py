"""Synthetic workload generation and file ingestion.

Embeddings come from Gaussian clusters (some queries end up near-duplicates,
others far apart), costs from min-max normalized synthetic token counts, and
arrivals from uniform, Zipf or explicit distributions.  Spaces round-trip
through a JSON file so externally computed embeddings can be ingested.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ._io import atomic_write_text
from .core import Cache, QuerySpace
from .errors import FormatError, GenerationError
from .offline import OfflineRecord

COST_FLOOR = 0.01           # keeps min-max normalized costs inside (0, 1]
_SHORT_TOKENS = (3, 11)     # terse phrasings ("Rome attractions")
_LONG_TOKENS = (15, 41)     # verbose phrasings of the same topic


@dataclass
class WorkloadSpec:
    """Recipe for a synthetic query space.

    Queries come in topic clusters (default: pairs, i.e. ceil(m/2) clusters,
    mirroring short/long phrasings of the same request); token counts are
    right-skewed so most queries are short and a few are long.
    """

    m: int
    d_e: int = 384
    cluster_count: Optional[int] = None  # default ceil(m/2): topic pairs
    cluster_spread: float = 0.25
    arrival: str = "uniform"                    # uniform | zipf | explicit
    zipf_s: float = 1.0
    arrival_probs: Optional[np.ndarray] = None  # for arrival == "explicit"
    cost_model: str = "token"                   # token | explicit
    cost_values: Optional[np.ndarray] = None    # for cost_model == "explicit"
    noise_sigma: float = 0.05
    metric: str = "euclidean"                   # euclidean | cosine | threshold
    epsilon: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.d_e < 1:
            raise ValueError("d_e must be >= 1")
        if self.cluster_count is None:
            self.cluster_count = (self.m + 1) // 2
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be >= 1")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be > 0")
        if self.arrival not in ("uniform", "zipf", "explicit"):
            raise ValueError(f"unknown arrival model {self.arrival!r}")
        if self.arrival == "explicit" and self.arrival_probs is None:
            raise ValueError("explicit arrivals require arrival_probs")
        if self.cost_model not in ("token", "explicit"):
            raise ValueError(f"unknown cost model {self.cost_model!r}")
        if self.cost_model == "explicit" and self.cost_values is None:
            raise ValueError("explicit costs require cost_values")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.metric not in ("euclidean", "cosine", "threshold"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "threshold" and (self.epsilon is None or self.epsilon < 0):
            raise ValueError("threshold metric requires epsilon >= 0")


def _arrival_probs(spec: WorkloadSpec) -> np.ndarray:
    if spec.arrival == "uniform":
        return np.full(spec.m, 1.0 / spec.m)
    if spec.arrival == "zipf":
        # Non-uniform extension beyond the uniform default; rank i gets
        # weight 1 / (i + 1)^s.
        w = 1.0 / np.arange(1, spec.m + 1, dtype=np.float64) ** spec.zipf_s
        return w / w.sum()
    p = np.asarray(spec.arrival_probs, dtype=np.float64)
    if p.shape != (spec.m,):
        raise GenerationError("arrival_probs must have length m")
    return p


def _costs(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.cost_model == "explicit":
        c = np.asarray(spec.cost_values, dtype=np.float64)
        if c.shape != (spec.m,):
            raise GenerationError("cost_values must have length m")
        if (c <= 0).any() or (c > 1).any():
            raise GenerationError("explicit costs must lie in (0, 1]")
        return c
    # clusters alternate short and long phrasings of the same topic, so each
    # one pairs a cheap query with an expensive one
    position = np.arange(spec.m) // spec.cluster_count
    short = rng.integers(_SHORT_TOKENS[0], _SHORT_TOKENS[1], size=spec.m)
    long = rng.integers(_LONG_TOKENS[0], _LONG_TOKENS[1], size=spec.m)
    tokens = np.where(position % 2 == 0, short, long)
    lo, hi = tokens.min(), tokens.max()
    if hi == lo:
        raise GenerationError("degenerate token counts: min-max normalization "
                              "undefined when all counts are equal")
    return np.maximum(COST_FLOOR, (tokens - lo) / (hi - lo))


def generate(spec: WorkloadSpec) -> QuerySpace:
    """Draw a query space from the spec, deterministically under its seed."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.cluster_count, spec.d_e))
    assignment = np.arange(spec.m) % spec.cluster_count  # even topic clusters
    embeddings = centers[assignment] + spec.cluster_spread * rng.normal(
        size=(spec.m, spec.d_e))
    if (embeddings == embeddings[0]).all():
        raise GenerationError("degenerate embeddings: all queries identical")
    costs = _costs(spec, rng)
    probs = _arrival_probs(spec)
    return QuerySpace.build(embeddings, probs, costs, metric=spec.metric,
                            epsilon=spec.epsilon)


def save_workload(space: QuerySpace, path: str) -> None:
    """Write a query space to the JSON workload format."""
    metric: dict = {"type": space.metric.kind}
    if space.metric.epsilon is not None:
        metric["epsilon"] = space.metric.epsilon
    doc = {
        "m": space.m,
        "d_e": space.dim,
        "metric": metric,
        "queries": [
            {"id": i,
             "embedding": [float(x) for x in space.embeddings[i]],
             "p": float(space.arrival_probs[i]),
             "c": float(space.costs[i])}
            for i in range(space.m)
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise FormatError(f"{where}: {msg}")


def load_workload(path: str) -> QuerySpace:
    """Parse and validate a workload file, rebuilding the distance matrix."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    where = path
    _require(isinstance(doc, dict), where, "top level must be an object")
    for key in ("m", "d_e", "metric", "queries"):
        _require(key in doc, where, f"missing field {key!r}")
    m = doc["m"]
    d_e = doc["d_e"]
    _require(isinstance(m, int) and m >= 1, where, "field 'm' must be a positive int")
    _require(isinstance(d_e, int) and d_e >= 1, where,
             "field 'd_e' must be a positive int")
    metric = doc["metric"]
    _require(isinstance(metric, dict) and "type" in metric, where,
             "field 'metric' must be an object with a 'type'")
    kind = metric["type"]
    _require(kind in ("euclidean", "cosine", "threshold"), f"{where}: metric.type",
             f"unknown metric type {kind!r}")
    epsilon = metric.get("epsilon")
    if kind == "threshold":
        _require(isinstance(epsilon, (int, float)) and epsilon >= 0,
                 f"{where}: metric.epsilon", "threshold metric requires epsilon >= 0")
    queries = doc["queries"]
    _require(isinstance(queries, list) and len(queries) == m, where,
             f"'queries' must list exactly m={m} entries")
    embeddings = np.zeros((m, d_e))
    probs = np.zeros(m)
    costs = np.zeros(m)
    seen_ids = set()
    for pos, entry in enumerate(queries):
        loc = f"{where}: queries[{pos}]"
        _require(isinstance(entry, dict), loc, "entry must be an object")
        for key in ("id", "embedding", "p", "c"):
            _require(key in entry, loc, f"missing field {key!r}")
        qid = entry["id"]
        _require(isinstance(qid, int) and 0 <= qid < m, f"{loc}.id",
                 f"id must be an int in [0, {m})")
        _require(qid not in seen_ids, f"{loc}.id", f"duplicate id {qid}")
        seen_ids.add(qid)
        emb = entry["embedding"]
        _require(isinstance(emb, list) and len(emb) == d_e, f"{loc}.embedding",
                 f"embedding must list exactly d_e={d_e} numbers")
        p = entry["p"]
        c = entry["c"]
        _require(isinstance(p, (int, float)) and 0 < p <= 1, f"{loc}.p",
                 f"p must lie in (0, 1], got {p}")
        _require(isinstance(c, (int, float)) and 0 < c <= 1, f"{loc}.c",
                 f"c must lie in (0, 1], got {c}")
        embeddings[qid] = emb
        probs[qid] = p
        costs[qid] = c
    _require(abs(probs.sum() - 1.0) <= 1e-9, f"{where}: queries[*].p",
             f"arrival probabilities sum to {probs.sum()!r}, expected 1 within 1e-9")
    try:
        return QuerySpace.build(embeddings, probs, costs, metric=kind,
                                epsilon=epsilon)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def synthesize_offline_dataset(space: QuerySpace, logging_cache: Optional[Cache],
                               n: int, nu_override: Union[None, float, Sequence[float]] = None,
                               seed: int = 0,
                               noise_sigma: float = 0.05) -> list[OfflineRecord]:
    """Simulate n logged rounds under a fixed logging cache.

    Cost feedback is present when the serve rule would have invoked the model
    (true cost vs distance to the logging cache), or - when nu_override is
    given - by an independent per-query coin with that bias.  Realized costs
    are the true costs plus Gaussian noise, clipped into (0, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cache = logging_cache if logging_cache is not None else Cache.empty()
    rng = np.random.default_rng(seed)
    qs = rng.choice(space.m, size=n, p=space.arrival_probs)
    if nu_override is not None:
        nu = np.broadcast_to(np.asarray(nu_override, dtype=np.float64),
                             (space.m,)).copy()
        if (nu < 0).any() or (nu > 1).any():
            raise ValueError("nu_override must lie in [0, 1]")
        feedback = rng.random(n) < nu[qs]
    else:
        if cache.size == 0:
            dist = np.full(space.m, math.inf)
        else:
            dist = space.metric.matrix[:, cache.indices()].min(axis=1)
        feedback = space.costs[qs] <= dist[qs]
    noise = rng.normal(0.0, noise_sigma, size=n)
    # tiny positive floor keeps realized costs inside the (0, 1] record contract
    realized = np.maximum(np.clip(space.costs[qs] + noise, 0.0, 1.0), 1e-12)
    return [
        OfflineRecord(round=t + 1, cache=cache, query=int(qs[t]),
                      observed_cost=float(realized[t]) if feedback[t] else None)
        for t in range(n)
    ]
