"""Online adaptive cache learning with low switching.

The low-switching learner partitions cost feedback into per-query stages and
arrivals into global stages; the cache is recomputed (optimistic
lower-confidence costs fed to reverse greedy) only when a stage completes,
so the number of cache changes grows doubly-logarithmically in the horizon.
Every-round variants (LCB, UCB, epsilon-greedy) and a clairvoyant
frequency-top-k baseline share the same trace-and-regret accounting.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._io import atomic_write_text
from .core import Cache, QuerySpace, cache_loss
from .errors import ConfigError
from .solvers import brute_force, epsilon_greedy_cache, lfu_cache, \
    reverse_greedy_matrix

CONFIDENCE_VARIANTS = ("alg", "text", "lemma")
VARIANTS = ("clcb-ls", "clcb", "cucb", "eps-greedy", "lfu-static")

TRACE_HEADER = ["t", "cache", "expected_loss", "switch_cost", "llm_called",
                "realized_cost", "switched"]


def confidence_log_term(variant: str, m: int, T: int, delta: float = 0.05) -> float:
    """Log term inside the confidence radius sqrt(term / (2 N)).

    The three printed radius constants disagree; "alg" (the pseudocode
    listing) is the default, the in-text and concentration-lemma constants
    are selectable.
    """
    if variant == "alg":
        return math.log(4.0 * m * T ** 3)
    if variant == "text":
        return 4.0 * math.log(4.0 * m * T / delta)
    if variant == "lemma":
        return math.log(2.0 * m * T ** 2 / delta)
    raise ConfigError(f"unknown confidence variant {variant!r}")


@dataclass
class OnlineState:
    """Mutable counters for the online learners.

    Stage tallies satisfy feedback_counts == hist_obs_q + stage_obs_q at all
    times; the frozen estimates change only when the cache is switched.
    """

    t: int
    arrivals: np.ndarray          # per-query arrival counts
    feedback_counts: np.ndarray   # per-query cost observations
    cost_sums: np.ndarray         # per-query cumulative observed cost
    tau_q: np.ndarray             # per-query stage index, >= 1
    stage_obs_q: np.ndarray       # observations in the current stage
    hist_obs_q: np.ndarray        # observations in all completed stages
    tau_p: int
    stage_obs_p: int
    hist_obs_p: int
    current_cache: Optional[Cache]
    frozen_p_hat: np.ndarray
    frozen_c_lower: np.ndarray

    @classmethod
    def fresh(cls, m: int) -> "OnlineState":
        return cls(t=1,
                   arrivals=np.zeros(m, dtype=np.int64),
                   feedback_counts=np.zeros(m, dtype=np.int64),
                   cost_sums=np.zeros(m),
                   tau_q=np.ones(m, dtype=np.int64),
                   stage_obs_q=np.zeros(m, dtype=np.int64),
                   hist_obs_q=np.zeros(m, dtype=np.int64),
                   tau_p=1, stage_obs_p=0, hist_obs_p=0,
                   current_cache=None,
                   frozen_p_hat=np.zeros(m),
                   frozen_c_lower=np.zeros(m))


def should_switch_query(state: OnlineState, q: int, horizon: int, m: int) -> bool:
    """A query's stage completes once its feedback tally reaches the threshold
    1 + sqrt(horizon * completed_observations / m)."""
    threshold = 1.0 + math.sqrt(horizon * state.hist_obs_q[q] / m)
    return state.stage_obs_q[q] >= threshold


def should_switch_arrival(state: OnlineState, horizon: int) -> bool:
    """Arrival-stage analogue: every round contributes one arrival observation."""
    threshold = 1.0 + math.sqrt(horizon * state.hist_obs_p)
    return state.stage_obs_p >= threshold


def advance_query_stage(state: OnlineState, q: int) -> None:
    state.tau_q[q] += 1
    state.hist_obs_q[q] += state.stage_obs_q[q]
    state.stage_obs_q[q] = 0


def advance_arrival_stage(state: OnlineState) -> None:
    state.tau_p += 1
    state.hist_obs_p += state.stage_obs_p
    state.stage_obs_p = 0


def _lower_costs(feedback: np.ndarray, sums: np.ndarray, log_term: float) -> np.ndarray:
    """Optimistic cost estimates: mean minus radius, 0 with no feedback."""
    seen = feedback > 0
    c_hat = np.zeros(feedback.shape[0])
    c_hat[seen] = sums[seen] / feedback[seen]
    out = np.zeros_like(c_hat)
    out[seen] = np.maximum(0.0, c_hat[seen]
                           - np.sqrt(log_term / (2.0 * feedback[seen])))
    return out


def _upper_costs(feedback: np.ndarray, sums: np.ndarray, log_term: float) -> np.ndarray:
    """Pessimistic cost estimates: mean plus radius, 1 with no feedback."""
    seen = feedback > 0
    c_hat = np.zeros(feedback.shape[0])
    c_hat[seen] = sums[seen] / feedback[seen]
    out = np.ones_like(c_hat)
    out[seen] = np.minimum(1.0, c_hat[seen]
                           + np.sqrt(log_term / (2.0 * feedback[seen])))
    return out


def switch_cache(state: OnlineState, space: QuerySpace, k: int,
                 confidence_log_term: float) -> tuple[Cache, float, int]:
    """Recompute the cache from current estimates and freeze them.

    Returns the new cache, the switch cost (true serving cost of every newly
    cached query; a simulator-ledger quantity, never shown to the learner)
    and the count of new members.
    """
    p_hat = state.arrivals / state.t
    c_lower = _lower_costs(state.feedback_counts, state.cost_sums,
                           confidence_log_term)
    new_cache = reverse_greedy_matrix(space.metric.matrix, p_hat, c_lower, k).cache
    prev = set(state.current_cache.members) if state.current_cache else set()
    added = [q for q in new_cache.members if q not in prev]
    cost = float(space.costs[added].sum()) if added else 0.0
    state.current_cache = new_cache
    state.frozen_p_hat = p_hat
    state.frozen_c_lower = c_lower
    return new_cache, cost, len(added)


def serve_and_update(state: OnlineState, space: QuerySpace, q: int,
                     rng: np.random.Generator,
                     noise_sigma: float = 0.05) -> tuple[bool, Optional[float]]:
    """Serve one arrival under the frozen optimistic estimates.

    The model is called only when the frozen lower-bound cost is strictly
    below the mismatch distance; the realized cost (truth plus clipped
    Gaussian noise) then feeds the counters and the current stage tally.
    The arrival tallies advance every round.
    """
    if state.current_cache is None:
        raise ValueError("serve_and_update requires a current cache")
    members = state.current_cache.indices()
    if members.size == 0:
        d = math.inf
    else:
        d = float(space.metric.matrix[q, members].min())
    llm_called = state.frozen_c_lower[q] < d
    realized: Optional[float] = None
    if llm_called:
        realized = float(np.clip(space.costs[q] + rng.normal(0.0, noise_sigma),
                                 0.0, 1.0))
        state.feedback_counts[q] += 1
        state.cost_sums[q] += realized
        state.stage_obs_q[q] += 1
    state.arrivals[q] += 1
    state.stage_obs_p += 1
    return bool(llm_called), realized


@dataclass
class RunTrace:
    """Per-round ledger of one online run plus its regret summary."""

    algo: str
    m: int
    k: int
    T: int
    seed: int
    alpha: float
    ref_loss: float                      # loss of the regret reference cache
    expected_loss: np.ndarray
    switch_cost: np.ndarray
    llm_called: np.ndarray
    realized_cost: np.ndarray            # NaN when no model call served the round
    switched: np.ndarray
    fills: np.ndarray                    # newly cached members per round
    cache_events: list = field(default_factory=list)  # (round, members) at changes

    @property
    def total_switches(self) -> int:
        return int(self.switched.sum())

    @property
    def total_llm_calls(self) -> int:
        return int(self.llm_called.sum() + self.fills.sum())

    @property
    def cum_regret(self) -> float:
        ref = self.alpha * self.ref_loss
        return float((self.expected_loss + self.switch_cost).sum() - self.T * ref)

    @property
    def cum_regret_no_switch(self) -> float:
        ref = self.alpha * self.ref_loss
        return float(self.expected_loss.sum() - self.T * ref)

    @property
    def avg_regret(self) -> float:
        return self.cum_regret / self.T

    def members_at(self, t: int) -> tuple[int, ...]:
        """Cache membership in force at round t (1-based)."""
        current: tuple[int, ...] = ()
        for when, members in self.cache_events:
            if when > t:
                break
            current = members
        return current

    def avg_regret_curve(self, stride: int = 1):
        """(rounds, avg regret, avg regret excluding switch costs) at multiples
        of stride."""
        ref = self.alpha * self.ref_loss
        cum = np.cumsum(self.expected_loss + self.switch_cost - ref)
        cum_ns = np.cumsum(self.expected_loss - ref)
        ts = np.arange(stride, self.T + 1, stride)
        return ts, cum[ts - 1] / ts, cum_ns[ts - 1] / ts

    def summary(self) -> dict:
        return {
            "algo": self.algo, "m": self.m, "k": self.k, "T": self.T,
            "seed": self.seed,
            "total_switches": self.total_switches,
            "total_llm_calls": self.total_llm_calls,
            "cum_regret": self.cum_regret,
            "avg_regret": self.avg_regret,
            "cum_regret_no_switch": self.cum_regret_no_switch,
            "alpha": self.alpha,
            "ref_loss": self.ref_loss,
        }

    def rows(self, stride: int = 1):
        """Yield per-round trace rows at every stride-th round."""
        event_idx = 0
        members: tuple[int, ...] = ()
        for i in range(self.T):
            t = i + 1
            while (event_idx < len(self.cache_events)
                   and self.cache_events[event_idx][0] == t):
                members = self.cache_events[event_idx][1]
                event_idx += 1
            if t % stride:
                continue
            realized = self.realized_cost[i]
            yield {
                "t": t,
                "cache": "|".join(str(q) for q in members),
                "expected_loss": float(self.expected_loss[i]),
                "switch_cost": float(self.switch_cost[i]),
                "llm_called": int(self.llm_called[i]),
                "realized_cost": None if math.isnan(realized) else float(realized),
                "switched": int(self.switched[i]),
            }


def write_trace_csv(trace: RunTrace, path: str, stride: int = 1) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for row in trace.rows(stride):
        writer.writerow([
            row["t"], row["cache"], repr(row["expected_loss"]),
            repr(row["switch_cost"]), row["llm_called"],
            "" if row["realized_cost"] is None else repr(row["realized_cost"]),
            row["switched"],
        ])
    atomic_write_text(path, buf.getvalue())


def _resolve_reference(space: QuerySpace, k: int, alpha: float,
                       ref_loss: Optional[float]) -> float:
    if ref_loss is not None:
        return ref_loss
    return brute_force(space, k).loss


def _run(space: QuerySpace, k: int, T: int, algo: str, *, delta: float,
         seed: int, noise_sigma: float, confidence_variant: str,
         epsilon_g: float, full_feedback: bool, alpha: float,
         ref_loss: Optional[float]) -> RunTrace:
    m = space.m
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 1 <= k <= m:
        raise ValueError(f"cache size k={k} out of range [1, {m}]")
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    ref = _resolve_reference(space, k, alpha, ref_loss)

    D = space.metric.matrix
    p_true = space.arrival_probs
    c_true = space.costs
    rng = np.random.default_rng(seed)
    arrivals = rng.choice(m, size=T, p=p_true)

    state = OnlineState.fresh(m)
    lcb_term = confidence_log_term(confidence_variant, m, T, delta)
    # stage-completion thresholds, refreshed whenever a stage advances
    thr_q = np.ones(m)
    thr_p = 1.0

    exp_loss = np.zeros(T)
    sw_cost = np.zeros(T)
    llm = np.zeros(T, dtype=np.uint8)
    realized_cost = np.full(T, np.nan)
    switched = np.zeros(T, dtype=np.uint8)
    fills = np.zeros(T, dtype=np.int32)
    events: list = []

    current_loss = 0.0
    decision_costs = np.zeros(m)   # every-round variants only
    dmin = np.full(m, np.inf)

    for i in range(T):
        t = i + 1
        q = int(arrivals[i])
        state.t = t
        changed = False

        if algo == "clcb-ls":
            do_switch = state.current_cache is None  # initial fill at t = 1
            if not do_switch:
                pending = np.flatnonzero(state.stage_obs_q >= thr_q)
                if pending.size:
                    qstar = int(pending[0])
                    advance_query_stage(state, qstar)
                    thr_q[qstar] = 1.0 + math.sqrt(
                        T * state.hist_obs_q[qstar] / m)
                    do_switch = True
                elif state.stage_obs_p >= thr_p:
                    advance_arrival_stage(state)
                    thr_p = 1.0 + math.sqrt(T * state.hist_obs_p)
                    do_switch = True
            if do_switch:
                before = state.current_cache
                cache, cost, n_new = switch_cache(state, space, k, lcb_term)
                if n_new or before is None:
                    changed = True
                    sw_cost[i] = cost
                    fills[i] = n_new
        elif algo == "lfu-static":
            if t == 1:
                cache = lfu_cache(space, k)
                state.current_cache = cache
                changed = True
                sw_cost[i] = float(c_true[cache.indices()].sum())
                fills[i] = cache.size
            decision_costs = c_true
        else:
            # every-round learners recompute estimates and the cache each round
            p_hat = state.arrivals / t
            if algo == "clcb":
                est = _lower_costs(state.feedback_counts, state.cost_sums,
                                   lcb_term)
                new_cache = reverse_greedy_matrix(D, p_hat, est, k).cache
            elif algo == "cucb":
                term = math.log(6.0 * m * t / delta)
                est = _upper_costs(state.feedback_counts, state.cost_sums, term)
                new_cache = reverse_greedy_matrix(D, p_hat, est, k).cache
            elif algo == "eps-greedy":
                seen = state.feedback_counts > 0
                est = np.zeros(m)
                est[seen] = state.cost_sums[seen] / state.feedback_counts[seen]
                new_cache = epsilon_greedy_cache(D, p_hat, est, k, epsilon_g, rng)
            else:
                raise ConfigError(f"unknown online variant {algo!r}")
            decision_costs = est
            prev = state.current_cache
            if prev is None or new_cache.members != prev.members:
                added = ([qq for qq in new_cache.members
                          if qq not in prev.members] if prev
                         else list(new_cache.members))
                changed = True
                sw_cost[i] = float(c_true[added].sum())
                fills[i] = len(added)
                state.current_cache = new_cache

        if changed:
            members = state.current_cache.indices()
            dmin = D[:, members].min(axis=1)
            current_loss = cache_loss(D, p_true, c_true,
                                      state.current_cache.members)
            switched[i] = 1
            events.append((t, state.current_cache.members))

        if algo == "clcb-ls":
            called, realized = serve_and_update(state, space, q, rng, noise_sigma)
            if called:
                llm[i] = 1
                realized_cost[i] = realized
        else:
            d = dmin[q]
            if algo == "lfu-static":
                use_llm = c_true[q] <= d          # serve rule with true costs
            else:
                use_llm = decision_costs[q] < d   # strict: ties serve the cache
            if use_llm or full_feedback:
                obs = float(np.clip(c_true[q] + rng.normal(0.0, noise_sigma),
                                    0.0, 1.0))
                state.feedback_counts[q] += 1
                state.cost_sums[q] += obs
                state.stage_obs_q[q] += 1
                if use_llm:
                    llm[i] = 1
                    realized_cost[i] = obs
            state.arrivals[q] += 1
            state.stage_obs_p += 1

        exp_loss[i] = current_loss

    return RunTrace(algo=algo, m=m, k=k, T=T, seed=seed, alpha=alpha,
                    ref_loss=ref, expected_loss=exp_loss, switch_cost=sw_cost,
                    llm_called=llm, realized_cost=realized_cost,
                    switched=switched, fills=fills, cache_events=events)


def run_clcb_sc_ls(space: QuerySpace, k: int, T: int, delta: float = 0.05,
                   seed: int = 0, noise_sigma: float = 0.05,
                   confidence_variant: str = "alg", alpha: float = 1.0,
                   ref_loss: Optional[float] = None) -> RunTrace:
    """Full low-switching protocol: stage checks, optimistic switches, serving."""
    return _run(space, k, T, "clcb-ls", delta=delta, seed=seed,
                noise_sigma=noise_sigma, confidence_variant=confidence_variant,
                epsilon_g=0.0, full_feedback=False, alpha=alpha,
                ref_loss=ref_loss)


def run_variant(space: QuerySpace, k: int, T: int, variant: str,
                params: Optional[dict] = None, seed: int = 0) -> RunTrace:
    """Run one of the comparison policies with the shared trace schema.

    Variants: "clcb-ls" (low switching), "clcb" / "cucb" (recompute each
    round with lower / upper confidence costs), "eps-greedy" (empirical costs
    with random evictions), "lfu-static" (clairvoyant frequency top-k, fixed).
    params may set delta, noise_sigma, epsilon_g, confidence_variant,
    full_feedback, alpha and ref_loss.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown online variant {variant!r}; "
                          f"expected one of {VARIANTS}")
    params = dict(params or {})
    known = {"delta", "noise_sigma", "epsilon_g", "confidence_variant",
             "full_feedback", "alpha", "ref_loss"}
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown run parameters: {sorted(unknown)}")
    return _run(space, k, T, variant,
                delta=params.get("delta", 0.05),
                seed=seed,
                noise_sigma=params.get("noise_sigma", 0.05),
                confidence_variant=params.get("confidence_variant", "alg"),
                epsilon_g=params.get("epsilon_g", 0.2),
                full_feedback=bool(params.get("full_feedback", False)),
                alpha=params.get("alpha", 1.0),
                ref_loss=params.get("ref_loss"))
