"""Experiment harness: seeded multi-run execution with CSV/JSON emission.

Subcommands: gen-workload, solve, offline, online, sweep.  Every run's seed
derives from (master seed, algorithm, run index, sweep value), so adding an
algorithm or value never perturbs the random streams of the others, and
repeated invocations are byte-identical.  Wall-clock runtimes are reported
in a separate runtimes.json because they are the one non-reproducible output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from ._io import atomic_write_text
from .core import QuerySpace, expected_loss
from .errors import (BudgetExceededError, ConfigError, DegenerateInstanceError,
                     FormatError, SemcacheError)
from .offline import (clcb_sc_offline, cucb_sc, epsilon_greedy_offline,
                      estimate, suboptimality_gap)
from .online import (CONFIDENCE_VARIANTS, VARIANTS, run_variant,
                     write_trace_csv)
from .solvers import brute_force, curvature, lfu_cache, reverse_greedy
from .workload import (WorkloadSpec, generate, load_workload, save_workload,
                       synthesize_offline_dataset)

OFFLINE_ALGOS = ("cucb", "clcb", "eps-greedy", "lfu")


def derive_seed(master: int, *parts) -> int:
    """Stable per-run seed from the master seed and a label tuple."""
    key = "|".join([str(master), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path_base: str, rows: list[dict], fieldnames: list[str],
                fmt: str) -> str:
    if fmt == "json":
        path = path_base + ".json"
        atomic_write_text(path, json.dumps(rows, indent=2) + "\n")
        return path
    path = path_base + ".csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_fmt(row.get(name)) for name in fieldnames])
    atomic_write_text(path, buf.getvalue())
    return path


def _write_json(path: str, payload) -> str:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")
    return path


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects a comma-separated int list") from exc
    if not values:
        raise ConfigError(f"{flag} must list at least one value")
    return values


def _parse_algos(text: str, allowed: Sequence[str], flag: str) -> list[str]:
    algos = [tok.strip() for tok in text.split(",") if tok.strip()]
    for algo in algos:
        if algo not in allowed:
            raise ConfigError(f"{flag}: unknown algorithm {algo!r}; "
                              f"expected a subset of {list(allowed)}")
    if not algos:
        raise ConfigError(f"{flag} must list at least one algorithm")
    return algos


def _positive(value: float, name: str) -> None:
    if value <= 0:
        raise ConfigError(f"{name} must be > 0, got {value}")


def _spec_from_args(args, m: int, seed: int) -> WorkloadSpec:
    return WorkloadSpec(m=m, d_e=args.d_e, cluster_count=args.clusters,
                        cluster_spread=args.spread, arrival=args.arrival,
                        zipf_s=args.zipf_s, cost_model=args.cost_model,
                        noise_sigma=args.noise_sigma, metric=args.metric,
                        epsilon=args.epsilon, seed=seed)


def _add_gen_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--d-e", type=int, default=384, dest="d_e",
                     help="embedding dimension")
    sub.add_argument("--clusters", type=int, default=4)
    sub.add_argument("--spread", type=float, default=0.25)
    sub.add_argument("--arrival", choices=("uniform", "zipf"), default="uniform")
    sub.add_argument("--zipf-s", type=float, default=1.0, dest="zipf_s")
    sub.add_argument("--cost-model", choices=("token",), default="token",
                     dest="cost_model")
    sub.add_argument("--noise-sigma", type=float, default=0.05,
                     dest="noise_sigma")
    sub.add_argument("--metric", choices=("euclidean", "cosine", "threshold"),
                     default="euclidean")
    sub.add_argument("--epsilon", type=float, default=None,
                     help="threshold metric radius")


def _add_shared_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--workload", type=str, default=None,
                     help="path to a workload JSON file")
    sub.add_argument("--k", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0, help="master seed")
    sub.add_argument("--runs", type=int, default=10)
    sub.add_argument("--out", type=str, default="out")
    sub.add_argument("--delta", type=float, default=0.05)
    sub.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcache",
        description="Semantic cache optimization and learning experiments")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-workload", help="write a synthetic workload file")
    gen.add_argument("--m", type=int, default=20)
    _add_gen_flags(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=str, default="out")
    gen.add_argument("--name", type=str, default="workload.json")

    solve = subs.add_parser("solve", help="loss vs cache size with known truth")
    _add_shared_flags(solve)
    solve.add_argument("--k-grid", type=str, default=None, dest="k_grid",
                       help="comma-separated cache sizes (default 1..m)")
    solve.add_argument("--bf-budget", type=int, default=10_000_000,
                       dest="bf_budget")

    off = subs.add_parser("offline", help="suboptimality gap vs dataset size")
    _add_shared_flags(off)
    off.add_argument("--n-grid", type=str, default="100,1000,10000",
                     dest="n_grid")
    off.add_argument("--algos", type=str, default=",".join(OFFLINE_ALGOS))
    off.add_argument("--nu", type=str, default="1.0",
                     help="feedback rate in [0,1], or a path to a per-query "
                          "JSON list")
    off.add_argument("--epsilon-g", type=float, default=0.2, dest="epsilon_g")
    off.add_argument("--noise-sigma", type=float, default=0.05,
                     dest="noise_sigma")

    onl = subs.add_parser("online", help="average regret over rounds")
    _add_shared_flags(onl)
    onl.add_argument("--T", type=int, default=10_000)
    onl.add_argument("--algos", type=str, default=",".join(VARIANTS))
    onl.add_argument("--stride", type=int, default=100)
    onl.add_argument("--confidence-variant", choices=CONFIDENCE_VARIANTS,
                     default="alg", dest="confidence_variant")
    onl.add_argument("--epsilon-g", type=float, default=0.2, dest="epsilon_g")
    onl.add_argument("--noise-sigma", type=float, default=0.05,
                     dest="noise_sigma")
    onl.add_argument("--traces", action="store_true",
                     help="also write per-run trace CSVs (downsampled)")

    swp = subs.add_parser("sweep", help="final regret vs cache size or universe size")
    _add_shared_flags(swp)
    swp.add_argument("--sweep-var", choices=("k", "m"), required=True,
                     dest="sweep_var")
    swp.add_argument("--values", type=str, required=True)
    swp.add_argument("--T", type=int, default=10_000)
    swp.add_argument("--algos", type=str,
                     default="clcb-ls,clcb,cucb,eps-greedy,lfu-static")
    swp.add_argument("--stride", type=int, default=100)
    swp.add_argument("--confidence-variant", choices=CONFIDENCE_VARIANTS,
                     default="alg", dest="confidence_variant")
    swp.add_argument("--epsilon-g", type=float, default=0.2, dest="epsilon_g")
    _add_gen_flags(swp)  # also supplies --noise-sigma, shared with the runs

    return parser


def _load_space(args) -> QuerySpace:
    if args.workload is None:
        raise ConfigError("--workload is required for this subcommand")
    return load_workload(args.workload)


def cmd_gen_workload(args) -> int:
    spec = _spec_from_args(args, m=args.m, seed=args.seed)
    space = generate(spec)
    path = os.path.join(args.out, args.name)
    save_workload(space, path)
    print(path)
    return 0


def cmd_solve(args) -> int:
    space = _load_space(args)
    if args.k_grid is None:
        ks = list(range(1, space.m + 1))
    else:
        ks = _parse_int_list(args.k_grid, "--k-grid")
    for k in ks:
        if not 1 <= k <= space.m:
            raise ConfigError(f"k={k} out of range [1, {space.m}]")
    try:
        alpha = curvature(space).approx_ratio
    except DegenerateInstanceError as exc:
        print(f"warning: {exc}", file=sys.stderr)
        alpha = None
    rows = []
    for k in ks:
        rg = reverse_greedy(space, k)
        lfu = lfu_cache(space, k)
        try:
            bf_loss = brute_force(space, k, budget=args.bf_budget).loss
        except BudgetExceededError as exc:
            print(f"warning: k={k}: {exc}", file=sys.stderr)
            bf_loss = None
        rows.append({"k": k, "rg_loss": rg.loss, "bf_loss": bf_loss,
                     "lfu_loss": expected_loss(space, lfu), "alpha": alpha})
    path = _write_rows(os.path.join(args.out, "solve"), rows,
                       ["k", "rg_loss", "bf_loss", "lfu_loss", "alpha"],
                       args.format)
    print(path)
    return 0


def _parse_nu(text: str):
    try:
        value = float(text)
    except ValueError:
        with open(text) as fh:
            data = json.load(fh)
        return np.asarray(data, dtype=np.float64)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"--nu must lie in [0, 1], got {value}")
    return value


def cmd_offline(args) -> int:
    space = _load_space(args)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    ns = _parse_int_list(args.n_grid, "--n-grid")
    algos = _parse_algos(args.algos, OFFLINE_ALGOS, "--algos")
    nu = _parse_nu(args.nu)
    ref_loss = brute_force(space, args.k).loss
    run_rows = []
    for n in ns:
        _positive(n, "--n-grid values")
        for run in range(args.runs):
            data_seed = derive_seed(args.seed, "offline-dataset", n, run)
            dataset = synthesize_offline_dataset(
                space, None, n, nu_override=nu, seed=data_seed,
                noise_sigma=args.noise_sigma)
            for algo in algos:
                if algo == "cucb":
                    cache = cucb_sc(dataset, space.metric, args.k, args.delta)
                elif algo == "clcb":
                    cache = clcb_sc_offline(dataset, space.metric, args.k,
                                            args.delta)
                elif algo == "eps-greedy":
                    eps_seed = derive_seed(args.seed, "offline-eps", n, run)
                    cache = epsilon_greedy_offline(dataset, space.metric,
                                                   args.k, args.epsilon_g,
                                                   seed=eps_seed)
                else:  # lfu on empirical dataset frequencies
                    est = estimate(dataset, space.m, args.delta)
                    cache = lfu_cache(est.arrivals.astype(np.float64), args.k)
                gap = expected_loss(space, cache) - ref_loss
                run_rows.append({"algo": algo, "n": n, "run": run,
                                 "seed": data_seed, "subopt": gap})
    _write_rows(os.path.join(args.out, "offline_runs"), run_rows,
                ["algo", "n", "run", "seed", "subopt"], "csv")
    report = []
    for algo in algos:
        for n in ns:
            gaps = [r["subopt"] for r in run_rows
                    if r["algo"] == algo and r["n"] == n]
            mean, std = _mean_std(gaps)
            report.append({"algo": algo, "n": n, "subopt_mean": mean,
                           "subopt_std": std, "n_runs": len(gaps)})
    path = _write_rows(os.path.join(args.out, "offline_report"), report,
                       ["algo", "n", "subopt_mean", "subopt_std", "n_runs"],
                       args.format)
    print(path)
    return 0


def cmd_online(args) -> int:
    space = _load_space(args)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    if args.T < 1:
        raise ConfigError("--T must be >= 1")
    if args.stride < 1:
        raise ConfigError("--stride must be >= 1")
    algos = _parse_algos(args.algos, VARIANTS, "--algos")
    ref_loss = brute_force(space, args.k).loss
    params_base = {"delta": args.delta, "noise_sigma": args.noise_sigma,
                   "epsilon_g": args.epsilon_g,
                   "confidence_variant": args.confidence_variant,
                   "alpha": 1.0, "ref_loss": ref_loss}
    summaries = []
    curve_rows = []
    report = []
    runtimes = []
    for algo in algos:
        finals, finals_ns, switches, llm_calls = [], [], [], []
        curves, curves_ns = [], []
        ts = None
        for run in range(args.runs):
            seed = derive_seed(args.seed, algo, run)
            start = time.perf_counter()
            trace = run_variant(space, args.k, args.T, algo,
                                params=params_base, seed=seed)
            elapsed_ms = 1000.0 * (time.perf_counter() - start)
            runtimes.append({"algo": algo, "run": run,
                             "runtime_ms": elapsed_ms})
            summaries.append(trace.summary())
            ts, avg, avg_ns = trace.avg_regret_curve(args.stride)
            curves.append(avg)
            curves_ns.append(avg_ns)
            finals.append(trace.avg_regret)
            finals_ns.append(trace.cum_regret_no_switch / args.T)
            switches.append(trace.total_switches)
            llm_calls.append(trace.total_llm_calls)
            if args.traces:
                trace_path = os.path.join(args.out, "traces",
                                          f"{algo}_run{run}.csv")
                write_trace_csv(trace, trace_path, stride=args.stride)
        curves_arr = np.asarray(curves)
        curves_ns_arr = np.asarray(curves_ns)
        for j, t in enumerate(ts):
            mean, std = _mean_std(curves_arr[:, j])
            mean_ns, std_ns = _mean_std(curves_ns_arr[:, j])
            curve_rows.append({
                "algo": algo, "t": int(t),
                "avg_regret_mean": mean, "avg_regret_std": std,
                "avg_regret_no_switch_mean": mean_ns,
                "avg_regret_no_switch_std": std_ns,
                "n_runs": args.runs})
        fa_mean, fa_std = _mean_std(finals)
        fn_mean, fn_std = _mean_std(finals_ns)
        sw_mean, sw_std = _mean_std(switches)
        llm_mean, llm_std = _mean_std(llm_calls)
        report.append({
            "algo": algo, "T": args.T, "n_runs": args.runs,
            "final_avg_regret_mean": fa_mean, "final_avg_regret_std": fa_std,
            "final_avg_regret_no_switch_mean": fn_mean,
            "final_avg_regret_no_switch_std": fn_std,
            "switches_mean": sw_mean, "switches_std": sw_std,
            "llm_calls_mean": llm_mean, "llm_calls_std": llm_std})
    _write_json(os.path.join(args.out, "online_summary.json"), summaries)
    _write_rows(os.path.join(args.out, "online_curves"), curve_rows,
                ["algo", "t", "avg_regret_mean", "avg_regret_std",
                 "avg_regret_no_switch_mean", "avg_regret_no_switch_std",
                 "n_runs"], "csv")
    path = _write_rows(os.path.join(args.out, "online_report"), report,
                       ["algo", "T", "n_runs", "final_avg_regret_mean",
                        "final_avg_regret_std",
                        "final_avg_regret_no_switch_mean",
                        "final_avg_regret_no_switch_std", "switches_mean",
                        "switches_std", "llm_calls_mean", "llm_calls_std"],
                       args.format)
    _write_json(os.path.join(args.out, "runtimes.json"), runtimes)
    print(path)
    return 0


def cmd_sweep(args) -> int:
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    if args.T < 1:
        raise ConfigError("--T must be >= 1")
    values = _parse_int_list(args.values, "--values")
    algos = _parse_algos(args.algos, VARIANTS, "--algos")
    rows = []
    for value in values:
        if args.sweep_var == "k":
            space = _load_space(args)
            k = value
        else:
            spec = _spec_from_args(
                args, m=value, seed=derive_seed(args.seed, "workload", value))
            space = generate(spec)
            k = args.k
        if not 1 <= k <= space.m:
            raise ConfigError(f"k={k} out of range [1, {space.m}]")
        ref_loss = brute_force(space, k).loss
        params = {"delta": args.delta, "noise_sigma": args.noise_sigma,
                  "epsilon_g": args.epsilon_g,
                  "confidence_variant": args.confidence_variant,
                  "alpha": 1.0, "ref_loss": ref_loss}
        for algo in algos:
            finals = []
            for run in range(args.runs):
                seed = derive_seed(args.seed, algo, run, args.sweep_var, value)
                trace = run_variant(space, k, args.T, algo, params=params,
                                    seed=seed)
                finals.append(trace.avg_regret)
            mean, std = _mean_std(finals)
            rows.append({"algo": algo, args.sweep_var: value,
                         "final_avg_regret_mean": mean,
                         "final_avg_regret_std": std, "n_runs": args.runs})
    path = _write_rows(os.path.join(args.out, "sweep_report"), rows,
                       ["algo", args.sweep_var, "final_avg_regret_mean",
                        "final_avg_regret_std", "n_runs"], args.format)
    print(path)
    return 0


_COMMANDS = {
    "gen-workload": cmd_gen_workload,
    "solve": cmd_solve,
    "offline": cmd_offline,
    "online": cmd_online,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SemcacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
