import numpy as np
import pytest

from semcache import Cache, DistanceMetric, QuerySpace, WorkloadSpec, generate

# Hand-checkable 3-query instance used across modules:
#   p = (0.5, 0.3, 0.2), c = (0.4, 0.6, 0.2)
#   D[0][1] = 0.1, D[0][2] = 0.9, D[1][2] = 0.8
THREE_D = np.array([
    [0.0, 0.1, 0.9],
    [0.1, 0.0, 0.8],
    [0.9, 0.8, 0.0],
])
THREE_P = np.array([0.5, 0.3, 0.2])
THREE_C = np.array([0.4, 0.6, 0.2])


@pytest.fixture
def three_query_space() -> QuerySpace:
    metric = DistanceMetric.from_matrix(THREE_D)
    return QuerySpace(np.zeros((3, 2)), THREE_P, THREE_C, metric)


def clustered_space(seed: int, m: int = 8, d_e: int = 6, clusters: int = 3,
                    spread: float = 0.3, metric: str = "euclidean",
                    epsilon=None, arrival: str = "uniform") -> QuerySpace:
    """Small clustered instance for randomized tests."""
    spec = WorkloadSpec(m=m, d_e=d_e, cluster_count=clusters,
                        cluster_spread=spread, arrival=arrival, metric=metric,
                        epsilon=epsilon, seed=seed)
    return generate(spec)


def random_valid_space(rng: np.random.Generator, m: int,
                       metric: str = "euclidean", epsilon=None) -> QuerySpace:
    """Fully random instance (embeddings, p, c) with valid invariants."""
    emb = rng.normal(size=(m, 4))
    p = rng.uniform(0.05, 1.0, size=m)
    p = p / p.sum()
    c = rng.uniform(0.05, 1.0, size=m)
    return QuerySpace.build(emb, p, c, metric=metric, epsilon=epsilon)


def random_cache(rng: np.random.Generator, m: int, allow_empty: bool = False) -> Cache:
    lo = 0 if allow_empty else 1
    size = int(rng.integers(lo, m + 1))
    members = rng.choice(m, size=size, replace=False)
    return Cache.of(members)
