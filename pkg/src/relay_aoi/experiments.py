"""Sweep experiments over environment parameters.

Each experiment sweeps one variable over a grid, runs every requested
policy for several paired-seed replications per grid value, and writes one
CSV row per (value, policy) with a Student-t confidence interval.
Comparisons simulate with raw (unbounded) ages; table policies are solved
on the bounded model and clamp states at lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from relay_aoi.core import SystemConfig
from relay_aoi.dpp import DppConfig
from relay_aoi.harness import (
    DppPolicy,
    GreedyPolicy,
    Policy,
    RandomPolicy,
    RunMetrics,
    TablePolicy,
    simulate,
    write_timeseries_csv,
)
from relay_aoi.kernel import build_kernel
from relay_aoi.solver import BisectionResult, SolverConfig, bisect

SWEEP_VARIABLES = ("budget", "arrival", "reliability", "sources", "weight", "tradeoff")

TABLE_POLICIES = ("rvia", "rvia-lower")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    sweep: str
    grid: Tuple[float, ...]
    base: SystemConfig
    policies: Tuple[str, ...]
    horizon: int = 100_000
    replications: int = 5
    seed_base: int = 0
    solver: SolverConfig = SolverConfig()
    dpp: DppConfig = DppConfig()
    emit_series: bool = False

    def __post_init__(self):
        if self.sweep not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.sweep!r}")
        if not self.grid:
            raise ValueError("sweep grid must be nonempty")
        if not self.policies:
            raise ValueError("need at least one policy")
        if self.replications < 1:
            raise ValueError("need at least one replication")


def config_for_cell(spec: ExperimentSpec, value: float) -> SystemConfig:
    base = spec.base
    if spec.sweep == "budget":
        return SystemConfig(
            base.num_sources, base.arrival_rates, base.weights,
            base.p1, base.p2, float(value), base.aoi_bound,
        )
    if spec.sweep == "arrival":
        return SystemConfig(
            base.num_sources, (float(value),) * base.num_sources, base.weights,
            base.p1, base.p2, base.budget, base.aoi_bound,
        )
    if spec.sweep == "reliability":
        return SystemConfig(
            base.num_sources, base.arrival_rates, base.weights,
            float(value), float(value), base.budget, base.aoi_bound,
        )
    if spec.sweep == "sources":
        n = int(value)
        mus = tuple(base.arrival_rates[i] if i < len(base.arrival_rates) else base.arrival_rates[-1]
                    for i in range(n))
        ws = tuple(base.weights[i] if i < len(base.weights) else base.weights[-1]
                   for i in range(n))
        return SystemConfig(n, mus, ws, base.p1, base.p2, base.budget, base.aoi_bound)
    if spec.sweep == "weight":
        if base.num_sources != 2:
            raise ValueError("weight sweep is defined for two sources (w2 = 1 - w1)")
        w1 = float(value)
        return SystemConfig(
            base.num_sources, base.arrival_rates, (w1, 1.0 - w1),
            base.p1, base.p2, base.budget, base.aoi_bound,
        )
    # tradeoff: environment unchanged, the scheduler parameter varies
    return base


@dataclass
class CellResult:
    sweep_value: float
    policy: str
    runs: List[RunMetrics]

    def mean_ci(self, attr: str = "ws_aaoi") -> Tuple[float, float, float]:
        vals = np.array([getattr(m, attr) for m in self.runs], dtype=float)
        mean = float(vals.mean())
        if len(vals) < 2:
            return mean, mean, mean
        half = float(stats.t.ppf(0.975, len(vals) - 1) * vals.std(ddof=1) / math.sqrt(len(vals)))
        return mean, mean - half, mean + half

    def per_source_mean_ci(self, source: int) -> Tuple[float, float, float]:
        vals = np.array([m.per_source_aaoi[source] for m in self.runs], dtype=float)
        mean = float(vals.mean())
        if len(vals) < 2:
            return mean, mean, mean
        half = float(stats.t.ppf(0.975, len(vals) - 1) * vals.std(ddof=1) / math.sqrt(len(vals)))
        return mean, mean - half, mean + half


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    cells: List[CellResult] = field(default_factory=list)
    failures: List[Tuple[float, str, str]] = field(default_factory=list)


def _solve_tables(cfg: SystemConfig, solver_cfg: SolverConfig) -> Tuple[BisectionResult, object]:
    if not cfg.bounded:
        raise ValueError("table policies need a bounded model to solve on")
    kern = build_kernel(cfg)
    return bisect(kern, cfg, solver_cfg), kern


def _make_policies(
    names: Sequence[str],
    cfg: SystemConfig,
    spec: ExperimentSpec,
    sweep_value: float,
) -> Dict[str, Policy]:
    out: Dict[str, Policy] = {}
    solved: Optional[Tuple[BisectionResult, object]] = None
    for name in names:
        if name in TABLE_POLICIES:
            if solved is None:
                solved = _solve_tables(cfg, spec.solver)
            result, kern = solved
            table = result.policy_plus if name == "rvia" else result.policy_minus
            out[name] = TablePolicy(table, kern.indexer, name=name)
        elif name == "dpp":
            dpp_cfg = spec.dpp
            if spec.sweep == "tradeoff":
                dpp_cfg = DppConfig(tradeoff_v=float(sweep_value))
            pol = DppPolicy(dpp_cfg)
            pol.name = "dpp"
            out[name] = pol
        elif name == "greedy":
            out[name] = GreedyPolicy()
        elif name == "random":
            out[name] = RandomPolicy()
        else:
            raise ValueError(f"unknown policy {name!r}")
    return out


def run_experiment(
    spec: ExperimentSpec,
    out_dir: str,
    extra_policies: Optional[Dict[str, Policy]] = None,
) -> ExperimentResult:
    """Execute the sweep and write `<name>.csv` (+ per-source CSV for
    weight sweeps, per-run series when requested).

    A failing cell is recorded in `<name>_failures.csv` and the sweep
    continues.  ``extra_policies`` lets callers inject prebuilt handles
    (e.g. a loaded Q-network) under their own names.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = ExperimentResult(spec=spec)
    for cell_idx, value in enumerate(spec.grid):
        try:
            cfg_cell = config_for_cell(spec, value)
            sim_cfg = cfg_cell.with_bound(None)
            policies = _make_policies(
                [n for n in spec.policies if not (extra_policies and n in extra_policies)],
                cfg_cell,
                spec,
                value,
            )
            if extra_policies:
                for name in spec.policies:
                    if name in extra_policies:
                        policies[name] = extra_policies[name]
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            result.failures.append((value, "*", repr(exc)))
            continue
        for name in spec.policies:
            policy = policies[name]
            runs: List[RunMetrics] = []
            try:
                for rep in range(spec.replications):
                    seed = (spec.seed_base, cell_idx, rep)
                    metrics = simulate(policy, sim_cfg, spec.horizon, seed)
                    metrics.policy = name
                    runs.append(metrics)
                    if spec.emit_series:
                        write_timeseries_csv(
                            str(out / f"{spec.name}_{name}_v{cell_idx}_r{rep}_series.csv"),
                            metrics,
                        )
            except Exception as exc:  # noqa: BLE001
                result.failures.append((value, name, repr(exc)))
                continue
            result.cells.append(CellResult(float(value), name, runs))

    _write_sweep_csv(str(out / f"{spec.name}.csv"), result)
    if spec.sweep == "weight":
        _write_per_source_csv(str(out / f"{spec.name}_per_source.csv"), result)
    if result.failures:
        with open(out / f"{spec.name}_failures.csv", "w") as fh:
            fh.write("sweep_value,policy,error\n")
            for value, name, err in result.failures:
                fh.write(f"{value},{name},{err!r}\n")
    return result


def _write_sweep_csv(path: str, result: ExperimentResult) -> None:
    with open(path, "w") as fh:
        fh.write("sweep_value,policy,mean,ci_low,ci_high\n")
        for cell in result.cells:
            mean, lo, hi = cell.mean_ci()
            fh.write(f"{cell.sweep_value:.17g},{cell.policy},{mean:.17g},{lo:.17g},{hi:.17g}\n")


def _write_per_source_csv(path: str, result: ExperimentResult) -> None:
    with open(path, "w") as fh:
        fh.write("sweep_value,policy,source,mean,ci_low,ci_high\n")
        for cell in result.cells:
            for i in range(len(cell.runs[0].per_source_aaoi)):
                mean, lo, hi = cell.per_source_mean_ci(i)
                fh.write(
                    f"{cell.sweep_value:.17g},{cell.policy},{i + 1},"
                    f"{mean:.17g},{lo:.17g},{hi:.17g}\n"
                )
