"""Semantic cache optimization under known and unknown parameters.

The library models a bounded cache over a finite query universe where
serving from the cache costs the semantic mismatch distance and a fresh
model call costs the query's serving cost.  It provides the expected-loss
engine, exact and greedy solvers, offline (pessimistic) and online
(optimistic, low-switching) learners, synthetic workload generation, and a
seeded experiment harness.
"""

from .core import (Cache, Decision, DistanceMetric, QuerySpace, bipartite_loss,
                   cache_loss, decide, distance_to_cache, expected_loss,
                   nearest_cached)
from .errors import (BudgetExceededError, ConfigError, DegenerateInstanceError,
                     FormatError, GenerationError, SemcacheError)
from .offline import (OfflineEstimates, OfflineRecord, clcb_sc_offline,
                      cucb_sc, epsilon_greedy_offline, estimate, load_dataset,
                      save_dataset, suboptimality_gap)
from .online import (OnlineState, RunTrace, advance_arrival_stage,
                     advance_query_stage, confidence_log_term, run_clcb_sc_ls,
                     run_variant, serve_and_update, should_switch_arrival,
                     should_switch_query, switch_cache, write_trace_csv)
from .solvers import (CurvatureReport, SolverResult, brute_force, curvature,
                      epsilon_greedy_cache, lfu_cache, reverse_greedy,
                      reverse_greedy_matrix)
from .workload import (WorkloadSpec, generate, load_workload, save_workload,
                       synthesize_offline_dataset)

__version__ = "0.1.0"

__all__ = [
    "Cache", "Decision", "DistanceMetric", "QuerySpace", "bipartite_loss",
    "cache_loss", "decide", "distance_to_cache", "expected_loss",
    "nearest_cached",
    "BudgetExceededError", "ConfigError", "DegenerateInstanceError",
    "FormatError", "GenerationError", "SemcacheError",
    "OfflineEstimates", "OfflineRecord", "clcb_sc_offline", "cucb_sc",
    "epsilon_greedy_offline", "estimate", "load_dataset", "save_dataset",
    "suboptimality_gap",
    "OnlineState", "RunTrace", "advance_arrival_stage", "advance_query_stage",
    "confidence_log_term", "run_clcb_sc_ls", "run_variant", "serve_and_update",
    "should_switch_arrival", "should_switch_query", "switch_cache",
    "write_trace_csv",
    "CurvatureReport", "SolverResult", "brute_force", "curvature",
    "epsilon_greedy_cache", "lfu_cache", "reverse_greedy",
    "reverse_greedy_matrix",
    "WorkloadSpec", "generate", "load_workload", "save_workload",
    "synthesize_offline_dataset",
]
