"""Command-line interface.

Subcommands: validate-kernel, solve, structure, simulate, train, compare,
complexity.  All take `--config <path>` (flat key = value file),
`--seed <int>` and `--out <dir>`.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from relay_aoi import configio
from relay_aoi.configio import ConfigError
from relay_aoi.core import SystemConfig, state_from_flat
from relay_aoi.drl import load_checkpoint, save_checkpoint, train, write_training_log
from relay_aoi.experiments import ExperimentSpec, run_experiment
from relay_aoi.harness import (
    DppPolicy,
    GreedyPolicy,
    QNetPolicy,
    RandomPolicy,
    TablePolicy,
    simulate,
    write_summary_csv,
    write_timeseries_csv,
)
from relay_aoi.kernel import build_kernel, check_unichain, monte_carlo_validate
from relay_aoi.solver import (
    RviaResult,
    alpha_switching_report,
    bisect,
    config_digest,
    load_policy,
    save_policy,
    solve_mdp,
    verify_switching,
    verify_value_monotonicity,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relay-aoi",
        description="Budget-constrained age-of-information scheduling over a two-hop relay.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("validate-kernel", "check kernel row sums and simulator agreement"),
        ("solve", "bisection over the multiplier; writes both endpoint policies"),
        ("structure", "verify policy/value structure; dump decision maps"),
        ("simulate", "run one policy for a horizon and log metrics"),
        ("train", "train the Q-learning policy"),
        ("compare", "run a sweep experiment from the config"),
        ("complexity", "time solver sweeps across state-space sizes"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
    return parser


def _load(path: str):
    values = configio.parse_config(path)
    return values, configio.system_config_from(values)


def cmd_validate_kernel(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    if not cfg.bounded:
        print("validate-kernel needs a bounded config (system.aoi_bound)", file=sys.stderr)
        return 1
    kern = build_kernel(cfg)
    row_err = kern.row_sum_error()
    trials = configio.get_int(values, "validate.trials", 4000)
    n_pairs = configio.get_int(values, "validate.pairs", 40)
    gen = np.random.Generator(np.random.PCG64(seed))
    pairs = [
        (int(gen.integers(kern.num_states)), int(gen.integers(kern.num_actions)))
        for _ in range(n_pairs)
    ]
    report = monte_carlo_validate(kern, cfg, trials, seed, pairs)
    pol = gen.integers(kern.num_actions, size=kern.num_states)
    unichain_ok, witness = check_unichain(kern, pol, cfg)
    ok = row_err <= 1e-12 and report.ok and unichain_ok and not kern.recap_events
    lines = [
        f"states={kern.num_states} actions={kern.num_actions}",
        f"row_sum_error={row_err:.3e} (tolerance 1e-12)",
        f"recap_events={len(kern.recap_events)}",
        f"monte_carlo: pairs={report.pairs_checked} branches={report.branches_checked} "
        f"max_z={report.max_abs_z:.2f} violations={len(report.violations)}",
        f"unichain_random_policy={'ok' if unichain_ok else f'FAIL witness={witness}'}",
        f"verdict={'clean' if ok else 'VIOLATIONS'}",
    ]
    out.mkdir(parents=True, exist_ok=True)
    (out / "kernel_report.txt").write_text("\n".join(lines) + "\n")
    export_limit = 60
    if kern.num_states <= export_limit:
        kern.export_text(str(out / "kernel_export.csv"))
    print("\n".join(lines))
    return 0 if ok else 1


def cmd_solve(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    solver_cfg = configio.solver_config_from(values)
    kern = build_kernel(cfg)
    result = bisect(kern, cfg, solver_cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(str(out / "policy_lambda_plus.csv"), result.policy_plus, cfg)
    save_policy(str(out / "policy_lambda_minus.csv"), result.policy_minus, cfg)
    with open(out / "solve_metrics.csv", "w") as fh:
        fh.write("policy,lambda,ws_aaoi,avg_tx,bellman_residual,constraint_slack\n")
        for tag, pol, met in [
            ("lambda_plus", result.policy_plus, result.metrics_plus),
            ("lambda_minus", result.policy_minus, result.metrics_minus),
        ]:
            fh.write(
                f"{tag},{pol.lam:.17g},{met.ws_aaoi:.17g},{met.avg_tx:.17g},"
                f"{pol.bellman_residual:.17g},{int(result.constraint_slack)}\n"
            )
    with open(out / "bisection_trace.csv", "w") as fh:
        fh.write("lambda,ws_aaoi,avg_tx\n")
        for lam, j, d in result.trace:
            fh.write(f"{lam:.17g},{j:.17g},{d:.17g}\n")
    print(
        f"lambda_plus={result.lambda_plus:.6g} (J={result.metrics_plus.ws_aaoi:.6g}, "
        f"D={result.metrics_plus.avg_tx:.6g}); lambda_minus={result.lambda_minus:.6g} "
        f"(J={result.metrics_minus.ws_aaoi:.6g}, D={result.metrics_minus.avg_tx:.6g}); "
        f"slack={result.constraint_slack}"
    )
    return 0


def _parse_context(raw: Optional[str], fallback: List[int]) -> List[int]:
    if raw is None:
        return fallback
    try:
        return [int(part) for part in raw.split(",")]
    except ValueError as exc:
        raise ConfigError(f"structure context must be comma-separated integers: {raw!r}") from exc


def cmd_structure(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    solver_cfg = configio.solver_config_from(values)
    lam = configio.get_float(values, "structure.lam", 1.25)
    kern = build_kernel(cfg)
    res: RviaResult = solve_mdp(kern, lam, cfg, solver_cfg)
    sw_ok, sw_viol = verify_switching(res.policy, kern.indexer)
    mono_ok, mono_viol = verify_value_monotonicity(res.values, kern.indexer)
    alpha_holds, alpha_total = alpha_switching_report(res.policy, kern.indexer)
    out.mkdir(parents=True, exist_ok=True)

    n = cfg.aoi_bound
    if cfg.num_sources == 2:
        beta_ctx = _parse_context(
            configio.get_str(values, "structure.beta_context"), [1, 0, 2, 1]
        )
        th1, x1, th2, x2 = beta_ctx
        with open(out / "structure_beta.csv", "w") as fh:
            fh.write("y1,y2,alpha,beta\n")
            for y1 in range(n + 1 - th1 - x1):
                for y2 in range(n + 1 - th2 - x2):
                    state = state_from_flat([th1, x1, y1, th2, x2, y2])
                    act = res.policy.action_for(kern.indexer.encode(state))
                    fh.write(f"{y1},{y2},{act.alpha},{act.beta}\n")
        alpha_ctx = _parse_context(
            configio.get_str(values, "structure.alpha_context"),
            [1, min(2, n - 2), 1, min(2, n - 2)],
        )
        th1, y1, th2, y2 = alpha_ctx
        with open(out / "structure_alpha.csv", "w") as fh:
            fh.write("x1,x2,alpha,beta\n")
            for xx1 in range(n + 1 - th1 - y1):
                for xx2 in range(n + 1 - th2 - y2):
                    state = state_from_flat([th1, xx1, y1, th2, xx2, y2])
                    act = res.policy.action_for(kern.indexer.encode(state))
                    fh.write(f"{xx1},{xx2},{act.alpha},{act.beta}\n")

    lines = [
        f"lambda={lam}",
        f"relay_switching={'ok' if sw_ok else 'FAIL'} violations={len(sw_viol)}",
        f"value_monotonicity={'ok' if mono_ok else 'FAIL'} violations={len(mono_viol)}",
        f"transmitter_persistence={alpha_holds}/{alpha_total} (reported, not asserted)",
    ]
    (out / "structure_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if (sw_ok and mono_ok) else 1


def _policy_from_config(values: Dict[str, str], cfg: SystemConfig):
    name = configio.get_str(values, "simulate.policy", "dpp")
    if name == "dpp":
        return DppPolicy(configio.dpp_config_from(values))
    if name == "greedy":
        return GreedyPolicy()
    if name == "random":
        return RandomPolicy()
    if name == "idle":
        from relay_aoi.harness import IdlePolicy

        return IdlePolicy()
    if name == "table":
        path = configio.get_str(values, "simulate.policy_file", required=True)
        solve_cfg = cfg if cfg.bounded else None
        if solve_cfg is None:
            raise ConfigError("table policy needs a bounded system.aoi_bound")
        kern = build_kernel(solve_cfg)
        table = load_policy(path, solve_cfg, kern)
        return TablePolicy(table, kern.indexer)
    if name == "drl":
        path = configio.get_str(values, "simulate.checkpoint", required=True)
        net, header = load_checkpoint(path)
        drl_cfg = configio.drl_config_from(values)
        return QNetPolicy(net, drl_cfg)
    raise ConfigError(f"unknown simulate.policy {name!r}")


def cmd_simulate(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    horizon = configio.get_int(values, "simulate.horizon", 100_000)
    log_every = configio.get_int(values, "simulate.log_every", max(1, horizon // 200))
    bound_raw = configio.get_str(values, "simulate.bound")
    sim_cfg = cfg
    if bound_raw is not None:
        sim_cfg = cfg.with_bound(None if bound_raw == "unbounded" else int(bound_raw))
    policy = _policy_from_config(values, cfg)
    metrics = simulate(policy, sim_cfg, horizon, seed, log_every)
    out.mkdir(parents=True, exist_ok=True)
    write_timeseries_csv(str(out / "timeseries.csv"), metrics)
    write_summary_csv(str(out / "summary.csv"), [metrics])
    print(
        f"policy={metrics.policy} ws_aaoi={metrics.ws_aaoi:.6g} tx={metrics.tx_mean:.6g}"
        + (f" h={metrics.h_mean:.6g}" if metrics.h_mean is not None else "")
    )
    return 0


def cmd_train(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    drl_cfg = configio.drl_config_from(values)
    net, logs = train(cfg, drl_cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    write_training_log(str(out / "training_log.csv"), logs)
    save_checkpoint(str(out / "checkpoint.qnet"), net, config_digest(cfg), drl_cfg)
    tail = logs[-max(1, len(logs) // 10):]
    print(
        f"episodes={len(logs)} final_eps={logs[-1].epsilon:.3f} "
        f"late_tx={np.mean([l.mean_tx_per_slot for l in tail]):.4f} "
        f"late_ws_aaoi={np.mean([l.ws_aaoi for l in tail]):.4f}"
    )
    return 0


def cmd_compare(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    name = configio.get_str(values, "experiment.name", "sweep")
    sweep = configio.get_str(values, "experiment.sweep", required=True)
    grid = configio.get_float_list(values, "experiment.grid", ())
    policies = tuple(
        part.strip()
        for part in configio.get_str(values, "experiment.policies", "dpp,greedy").split(",")
        if part.strip()
    )
    spec = ExperimentSpec(
        name=name,
        sweep=sweep,
        grid=tuple(grid),
        base=cfg,
        policies=policies,
        horizon=configio.get_int(values, "experiment.horizon", 100_000),
        replications=configio.get_int(values, "experiment.replications", 5),
        seed_base=seed,
        solver=configio.solver_config_from(values),
        dpp=configio.dpp_config_from(values),
        emit_series=configio.get_bool(values, "experiment.emit_series", False),
    )
    result = run_experiment(spec, str(out))
    print(
        f"{name}: {len(result.cells)} cells written to {out / (name + '.csv')}"
        + (f"; {len(result.failures)} failures" if result.failures else "")
    )
    return 0 if not result.failures else 1


def cmd_complexity(values: Dict[str, str], cfg: SystemConfig, out: Path, seed: int) -> int:
    from relay_aoi.solver import ScanPlan, cost_matrix, rvia_sweep

    n_grid = [int(v) for v in configio.get_float_list(values, "complexity.n_grid", (3, 4, 5, 6))]
    num_sources = configio.get_int(values, "complexity.num_sources", 2)
    timed = configio.get_int(values, "complexity.timed_sweeps", 10)
    warmup = configio.get_int(values, "complexity.warmup_sweeps", 3)
    rates = tuple(
        cfg.arrival_rates[i] if i < len(cfg.arrival_rates) else cfg.arrival_rates[-1]
        for i in range(num_sources)
    )
    weights = tuple(
        cfg.weights[i] if i < len(cfg.weights) else cfg.weights[-1]
        for i in range(num_sources)
    )
    rows = []
    for n in n_grid:
        cfg_n = SystemConfig(
            num_sources=num_sources,
            arrival_rates=rates,
            weights=weights,
            p1=cfg.p1,
            p2=cfg.p2,
            budget=cfg.budget,
            aoi_bound=n,
        )
        kern = build_kernel(cfg_n)
        costs = cost_matrix(kern, 1.0, cfg_n)
        plan = ScanPlan(kern.indexer)
        betas = np.array([a.beta for a in kern.actions], dtype=np.int64)
        h = np.zeros(kern.num_states)
        for _ in range(warmup):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        start = time.perf_counter()
        for _ in range(timed):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        per_sweep = (time.perf_counter() - start) / timed
        nnz = sum(m.nnz for m in kern.matrices)
        rows.append((n, kern.num_states, kern.num_actions, nnz, per_sweep))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "complexity.csv", "w") as fh:
        fh.write("n_bound,num_states,num_actions,kernel_nnz,sweep_seconds\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]:.9g}\n")
    sizes = np.array([r[1] * r[2] for r in rows], dtype=float)
    times = np.array([r[4] for r in rows])
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    print(f"log-log slope of sweep time vs |S|*|A|: {slope:.3f}")
    with open(out / "complexity_slope.txt", "w") as fh:
        fh.write(f"{slope:.6f}\n")
    return 0


_COMMANDS = {
    "validate-kernel": cmd_validate_kernel,
    "solve": cmd_solve,
    "structure": cmd_structure,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "compare": cmd_compare,
    "complexity": cmd_complexity,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values, cfg = _load(args.config)
        return _COMMANDS[args.command](values, cfg, Path(args.out), args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
