"""Acceptance suite.

Every test here implements one release criterion at its stated tolerance
and prints one `[PASS]/[FAIL]` line (run with `pytest -s` to watch them
live); the lines are also appended to acceptance_report.txt in the repo
root.  Heavy artifacts (solved policies) are shared through session
fixtures.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from relay_aoi.core import Action, SystemConfig
from relay_aoi.dpp import DppConfig, stability_bound
from relay_aoi.drl import DrlConfig, QNetwork, double_q_target, train
from relay_aoi.experiments import ExperimentSpec, run_experiment
from relay_aoi.harness import (
    DppPolicy,
    GreedyPolicy,
    QNetPolicy,
    RandomPolicy,
    TablePolicy,
    simulate,
)
from relay_aoi.kernel import accessible_state, build_kernel, check_unichain
from relay_aoi.solver import (
    ScanPlan,
    SolverConfig,
    bisect,
    cost_matrix,
    rvia_sweep,
    solve_mdp,
    verify_switching,
    verify_value_monotonicity,
)
from tests.conftest import outcome_enumeration_row

REPORT_PATH = Path(__file__).resolve().parent.parent / "acceptance_report.txt"
_REPORT_INITIALIZED = False


def record(name: str, ok: bool, detail: str) -> None:
    global _REPORT_INITIALIZED
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print("\n" + line)
    mode = "a" if _REPORT_INITIALIZED else "w"
    with open(REPORT_PATH, mode) as fh:
        fh.write(line + "\n")
    _REPORT_INITIALIZED = True
    assert ok, line


# ----------------------------------------------------------------------
# shared solves: the two-source comparison setting
# ----------------------------------------------------------------------

COMPARISON_P = (0.7, 0.8)
COMPARISON_MU = (0.5, 0.6)


def comparison_cfg(budget: float, bound) -> SystemConfig:
    return SystemConfig(
        2, COMPARISON_MU, (1.0, 1.0), COMPARISON_P[0], COMPARISON_P[1],
        budget, aoi_bound=bound,
    )


@pytest.fixture(scope="session")
def sandwich_solves():
    """Bisection results at bound 6 for the budgets used by several tests."""
    out = {}
    for budget in (0.6, 1.0, 1.4):
        cfg = comparison_cfg(budget, bound=6)
        kern = build_kernel(cfg)
        out[budget] = (cfg, kern, bisect(kern, cfg, SolverConfig(zeta=0.1, epsilon=1e-3)))
    return out


# ----------------------------------------------------------------------
# criteria
# ----------------------------------------------------------------------


def test_kernel_validity_exhaustive():
    """Every row sums to one and equals the outcome-enumeration oracle."""
    start = time.perf_counter()
    cfg = SystemConfig(2, (0.5, 0.6), (1.0, 1.0), 0.7, 0.8, 1.0, aoi_bound=4)
    kern = build_kernel(cfg)
    assert kern.num_states == 35**2 == 1225
    row_err = kern.row_sum_error()
    worst = 0.0
    mismatched = 0
    for s_idx in range(kern.num_states):
        s = kern.indexer.decode(s_idx)
        for a_idx, act in enumerate(kern.actions):
            oracle = outcome_enumeration_row(s, act, cfg, kern.indexer)
            got = dict(kern.successors(s_idx, a_idx))
            if set(oracle) != set(got):
                mismatched += 1
                continue
            worst = max(worst, max(abs(oracle[k] - got[k]) for k in oracle))
    elapsed = time.perf_counter() - start
    ok = (
        row_err <= 1e-12
        and mismatched == 0
        and worst <= 1e-12
        and not kern.recap_events
        and elapsed < 10.0
    )
    record(
        "kernel-validity",
        ok,
        f"1225 states x 9 actions: row-sum err {row_err:.1e}, oracle prob diff "
        f"{worst:.1e}, support mismatches {mismatched}, recaps "
        f"{len(kern.recap_events)}, {elapsed:.1f}s",
    )


def test_unichain_reachability():
    """The always-reachable state is reached under 50 random policies."""
    start = time.perf_counter()
    cfg = SystemConfig(2, (1.0, 0.5), (1.0, 1.0), 0.7, 0.8, 1.0, aoi_bound=4)
    kern = build_kernel(cfg)
    target = accessible_state(cfg)
    assert target[0] == (0, 4, 0) and target[1] == (4, 0, 0)
    gen = np.random.default_rng(20240131)
    failures = []
    for k in range(50):
        policy = gen.integers(kern.num_actions, size=kern.num_states)
        ok, witness = check_unichain(kern, policy, cfg)
        if not ok:
            failures.append((k, witness))
    elapsed = time.perf_counter() - start
    record(
        "unichain-reachability",
        not failures and elapsed < 30.0,
        f"50 random deterministic policies at bound 4, mixed arrivals: "
        f"{len(failures)} failures, {elapsed:.1f}s",
    )


def test_rvia_correctness():
    """Residual at tolerance; long-run relaxed cost matches the reference
    value within 1%; restricted and full sweeps give the same table."""
    start = time.perf_counter()
    cfg = SystemConfig(1, (0.5,), (1.0,), 0.7, 0.8, 1.0, aoi_bound=4)
    kern = build_kernel(cfg)
    details = []
    ok = True
    for lam in (0.0, 0.5, 2.0):
        res = solve_mdp(kern, lam, cfg, SolverConfig(epsilon=1e-3, use_structure=True))
        res_u = solve_mdp(kern, lam, cfg, SolverConfig(epsilon=1e-3, use_structure=False))
        same = np.array_equal(res.policy.action_indices, res_u.policy.action_indices)
        sim = simulate(
            TablePolicy(res.policy, kern.indexer), cfg, 1_000_000,
            seed=(7, int(lam * 10)), lagrangian_lambda=lam,
        )
        rel = abs(sim.lagrangian_mean - res.lagrange_value) / abs(res.lagrange_value)
        ok = ok and res.policy.bellman_residual <= 1e-3 and rel <= 0.01 and same
        details.append(
            f"lam={lam:g}: resid={res.policy.bellman_residual:.1e} "
            f"sim-vs-ref {rel:.2%} identical={same}"
        )
    elapsed = time.perf_counter() - start
    record("rvia-correctness", ok and elapsed < 60.0, "; ".join(details) + f", {elapsed:.0f}s")


def test_switching_and_monotonicity_grid():
    """Relay switching and value monotonicity hold on every solved table."""
    start = time.perf_counter()
    ok = True
    details = []
    for bound in (4, 6):
        cfg = SystemConfig(2, (0.6, 0.9), (1.0, 1.0), 0.8, 0.7, 1.0, aoi_bound=bound)
        kern = build_kernel(cfg)
        for lam in (0.5, 1.25, 5.0):
            res = solve_mdp(kern, lam, cfg, SolverConfig(epsilon=1e-3))
            sw_ok, sw_viol = verify_switching(res.policy, kern.indexer)
            mono_ok, mono_viol = verify_value_monotonicity(res.values, kern.indexer)
            ok = ok and sw_ok and mono_ok
            details.append(f"N={bound},lam={lam:g}:{len(sw_viol)}/{len(mono_viol)}")
    elapsed = time.perf_counter() - start
    record(
        "switching-and-monotonicity",
        ok and elapsed < 300.0,
        "violations (switching/monotonicity) " + " ".join(details) + f", {elapsed:.0f}s",
    )


def test_bisection_sandwich(sandwich_solves):
    """Feasible/infeasible endpoints bracket the budget; costs order; the
    multiplier trace is monotone."""
    start = time.perf_counter()
    ok = True
    details = []
    for budget, (cfg, kern, res) in sandwich_solves.items():
        feasible = res.metrics_plus.avg_tx <= budget + 1e-12
        binding = not res.constraint_slack
        lower_infeasible = (not binding) or res.metrics_minus.avg_tx > budget
        ordered = res.metrics_minus.ws_aaoi <= res.metrics_plus.ws_aaoi + 1e-9
        by_lam = sorted(res.trace)
        monotone = all(
            d2 <= d1 + 1e-9 and j2 >= j1 - 1e-9
            for (l1, j1, d1), (l2, j2, d2) in zip(by_lam, by_lam[1:])
        )
        ok = ok and feasible and lower_infeasible and ordered and monotone
        details.append(
            f"G={budget}: D+={res.metrics_plus.avg_tx:.3f} "
            f"D-={res.metrics_minus.avg_tx:.3f} J-={res.metrics_minus.ws_aaoi:.2f} "
            f"J+={res.metrics_plus.ws_aaoi:.2f} monotone={monotone}"
        )
    elapsed = time.perf_counter() - start
    record("bisection-sandwich", ok and elapsed < 600.0, "; ".join(details) + f", {elapsed:.0f}s")


def test_dpp_stability():
    """Running transmission mean obeys the budget and the backlog mean
    stays under the guaranteed cap."""
    start = time.perf_counter()
    cfg = SystemConfig(2, (0.5, 0.7), (1.0, 1.0), 0.3, 0.4, 1.2, aoi_bound=10)
    ok = True
    details = []
    for v in (1.0, 10.0, 100.0):
        dpp_cfg = DppConfig(tradeoff_v=v)
        metrics = simulate(DppPolicy(dpp_cfg), cfg, 100_000, seed=(41, int(v)))
        cap = stability_bound(cfg, dpp_cfg, 10)
        tx_ok = metrics.tx_mean <= 1.22
        h_ok = metrics.h_mean <= cap
        ok = ok and tx_ok and h_ok
        details.append(f"V={v:g}: tx={metrics.tx_mean:.3f} H={metrics.h_mean:.1f}<={cap:.1f}")
    elapsed = time.perf_counter() - start
    record("dpp-stability", ok and elapsed < 60.0, "; ".join(details) + f", {elapsed:.0f}s")


def test_dpp_near_optimality(sandwich_solves):
    """The queue scheduler is at most 10% worse than the feasible endpoint
    policy, and neither undercuts the infeasible lower bound by more than
    simulation noise."""
    start = time.perf_counter()
    ok = True
    details = []
    for budget, (cfg, kern, res) in sandwich_solves.items():
        ucfg = cfg.with_bound(None)
        seed = (17, int(budget * 10))
        sim_plus = simulate(TablePolicy(res.policy_plus, kern.indexer), ucfg, 100_000, seed=seed)
        sim_dpp = simulate(DppPolicy(DppConfig(100.0)), ucfg, 100_000, seed=seed)
        j_lower = res.metrics_minus.ws_aaoi
        within = sim_dpp.ws_aaoi <= 1.10 * sim_plus.ws_aaoi
        above = (
            sim_dpp.ws_aaoi >= 0.99 * j_lower and sim_plus.ws_aaoi >= 0.99 * j_lower
        )
        ok = ok and within and above
        details.append(
            f"G={budget}: dpp={sim_dpp.ws_aaoi:.2f} plus={sim_plus.ws_aaoi:.2f} "
            f"lower={j_lower:.2f}"
        )
    elapsed = time.perf_counter() - start
    record("dpp-near-optimality", ok, "; ".join(details) + f", {elapsed:.0f}s")


# ----------------------------------------------------------------------
# trend suite
# ----------------------------------------------------------------------


def _monotone_up_to_ci(cells, nonincreasing=True, attr="ws_aaoi"):
    """Consecutive grid means may only move the wrong way if their
    confidence intervals overlap."""
    cells = sorted(cells, key=lambda c: c.sweep_value)
    for a, b in zip(cells, cells[1:]):
        m1, lo1, hi1 = a.mean_ci(attr)
        m2, lo2, hi2 = b.mean_ci(attr)
        fine = m2 <= m1 if nonincreasing else m2 >= m1
        overlap = lo2 <= hi1 and lo1 <= hi2
        if not (fine or overlap):
            return False, f"{a.sweep_value}->{b.sweep_value}: {m1:.3f}->{m2:.3f}"
    return True, "monotone"


@pytest.fixture(scope="session")
def budget_sweep_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("budget_sweep")
    base = comparison_cfg(1.0, bound=10)
    spec = ExperimentSpec(
        name="budget_sweep", sweep="budget", grid=(0.4, 0.8, 1.2, 1.6, 2.0),
        base=base, policies=("rvia", "rvia-lower", "dpp", "greedy"),
        horizon=100_000, replications=5, seed_base=1000,
        solver=SolverConfig(zeta=0.1, epsilon=1e-3), dpp=DppConfig(100.0),
    )
    return run_experiment(spec, str(out))


def test_trend_budget(budget_sweep_result):
    start = time.perf_counter()
    result = budget_sweep_result
    ok = not result.failures
    details = []
    for policy in ("rvia", "rvia-lower", "dpp", "greedy"):
        cells = [c for c in result.cells if c.policy == policy]
        mono, note = _monotone_up_to_ci(cells, nonincreasing=True)
        ok = ok and mono and len(cells) == 5
        details.append(f"{policy}:{'ok' if mono else note}")
    elapsed = time.perf_counter() - start
    record("trend-budget", ok, " ".join(details) + f", +{elapsed:.0f}s")


def test_trend_arrival(tmp_path):
    spec = ExperimentSpec(
        name="arrival_sweep", sweep="arrival", grid=(0.2, 0.4, 0.6, 0.8, 1.0),
        base=SystemConfig(2, (0.5, 0.5), (1.0, 1.0), 0.6, 0.7, 1.2, aoi_bound=None),
        policies=("dpp", "greedy"), horizon=100_000, replications=5, seed_base=2000,
        dpp=DppConfig(100.0),
    )
    result = run_experiment(spec, str(tmp_path))
    ok = not result.failures
    details = []
    for policy in spec.policies:
        mono, note = _monotone_up_to_ci(
            [c for c in result.cells if c.policy == policy], nonincreasing=True
        )
        ok = ok and mono
        details.append(f"{policy}:{'ok' if mono else note}")
    record("trend-arrival", ok, " ".join(details))


def test_trend_reliability(tmp_path):
    spec = ExperimentSpec(
        name="reliability_sweep", sweep="reliability", grid=(0.2, 0.4, 0.6, 0.8, 1.0),
        base=SystemConfig(2, (0.6, 0.7), (1.0, 1.0), 0.5, 0.5, 1.2, aoi_bound=None),
        policies=("dpp", "greedy"), horizon=100_000, replications=5, seed_base=3000,
        dpp=DppConfig(100.0),
    )
    result = run_experiment(spec, str(tmp_path))
    ok = not result.failures
    details = []
    for policy in spec.policies:
        mono, note = _monotone_up_to_ci(
            [c for c in result.cells if c.policy == policy], nonincreasing=True
        )
        ok = ok and mono
        details.append(f"{policy}:{'ok' if mono else note}")
    record("trend-reliability", ok, " ".join(details))


def test_trend_source_count(tmp_path):
    spec = ExperimentSpec(
        name="source_count_sweep", sweep="sources", grid=(1, 2, 3, 4),
        base=SystemConfig(2, (0.6, 0.6), (1.0, 1.0), 0.4, 0.5, 1.0, aoi_bound=None),
        policies=("dpp",), horizon=100_000, replications=5, seed_base=4000,
        dpp=DppConfig(100.0),
    )
    result = run_experiment(spec, str(tmp_path))
    mono, note = _monotone_up_to_ci(result.cells, nonincreasing=False)
    record("trend-source-count", mono and not result.failures, note)


def test_trend_weight(tmp_path):
    spec = ExperimentSpec(
        name="weight_sweep", sweep="weight", grid=(0.05, 0.25, 0.5, 0.75, 0.95),
        base=SystemConfig(2, (0.6, 0.6), (0.5, 0.5), 0.7, 0.7, 1.2, aoi_bound=None),
        policies=("dpp",), horizon=100_000, replications=5, seed_base=5000,
        dpp=DppConfig(100.0),
    )
    result = run_experiment(spec, str(tmp_path))
    cells = sorted(result.cells, key=lambda c: c.sweep_value)
    ok = not result.failures
    note = "monotone"
    for a, b in zip(cells, cells[1:]):
        m1, lo1, hi1 = a.per_source_mean_ci(0)
        m2, lo2, hi2 = b.per_source_mean_ci(0)
        if not (m2 <= m1 or (lo2 <= hi1 and lo1 <= hi2)):
            ok = False
            note = f"w1 {a.sweep_value}->{b.sweep_value}: {m1:.3f}->{m2:.3f}"
    record("trend-weight", ok, f"source-1 average age vs its weight: {note}")


def test_baseline_gap(budget_sweep_result):
    """At the smallest budget both the feasible endpoint policy and the
    queue scheduler must halve the greedy baseline's weighted age.

    Caution: the feasible endpoint of the multiplier bisection at budget
    0.4 is the all-idle table at every solvable age bound (the smallest
    nonzero average-transmission level among multiplier-optimal tables is
    ~0.53 at bound 10), so its leg of this criterion cannot hold without
    the out-of-scope randomized mixture of the two endpoint policies; the
    measured queue-scheduler improvement sits at ~41%.  The criterion is
    asserted as stated.
    """
    result = budget_sweep_result
    at_smallest = {c.policy: c for c in result.cells if c.sweep_value == 0.4}
    greedy = at_smallest["greedy"].mean_ci()[0]
    rvia = at_smallest["rvia"].mean_ci()[0]
    dpp = at_smallest["dpp"].mean_ci()[0]
    rvia_impr = 1.0 - rvia / greedy
    dpp_impr = 1.0 - dpp / greedy
    ok = rvia_impr >= 0.5 and dpp_impr >= 0.5
    record(
        "baseline-gap",
        ok,
        f"budget 0.4: improvement over greedy (J={greedy:.2f}) is "
        f"{rvia_impr:.1%} (feasible endpoint, J={rvia:.2f}) and "
        f"{dpp_impr:.1%} (queue scheduler, J={dpp:.2f}); bar is >=50% for both",
    )


# ----------------------------------------------------------------------
# learning machinery
# ----------------------------------------------------------------------


def test_drl_machinery():
    start = time.perf_counter()
    # dueling aggregation is shift-invariant; with integer-representable
    # advantages the identity holds bitwise
    net = QNetwork(1, (), 4, np.random.default_rng(0))
    net.params["Wv"] = np.zeros((1, 1))
    net.params["bv"] = np.array([2.0])
    net.params["Wa"] = np.zeros((1, 4))
    net.params["ba"] = np.array([1.0, 3.0, 5.0, 7.0])
    x = np.array([[0.25]])
    q0 = net.forward(x)
    net.params["ba"] = net.params["ba"] + 3.0
    shift_ok = bool(np.array_equal(net.forward(x), q0))
    # double-target hand values
    t1 = double_q_target(1.0, 0.99, np.array([2.0, 5.0]), np.array([0.0, 3.0]))
    t2 = double_q_target(4.0, 0.0, np.array([1.0, 2.0]), np.array([9.0, 9.0]))
    target_ok = abs(t1 - 3.97) < 1e-12 and t2 == 4.0
    # analytic gradients against central differences
    rng = np.random.default_rng(5)
    net2 = QNetwork(3, (2,), 3, np.random.default_rng(9))
    xs = rng.normal(size=(4, 3))
    acts = rng.integers(3, size=4)
    ys = rng.normal(size=4)

    def loss_at(flat):
        net2.set_flat(flat)
        q = net2.forward(xs)
        td = q[np.arange(4), acts] - ys
        return float((td * td).mean())

    flat0 = net2.get_flat()
    q, cache = net2.forward_cached(xs)
    td = q[np.arange(4), acts] - ys
    dq = np.zeros_like(q)
    dq[np.arange(4), acts] = 2.0 * td / 4
    grads = net2.backward(cache, dq)
    analytic = np.concatenate([grads[k].ravel() for k in sorted(grads)])
    eps = 1e-6
    numeric = np.empty_like(flat0)
    for k in range(len(flat0)):
        up = flat0.copy(); up[k] += eps
        dn = flat0.copy(); dn[k] -= eps
        numeric[k] = (loss_at(up) - loss_at(dn)) / (2 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    grad_ok = bool(rel.max() < 1e-4)
    elapsed = time.perf_counter() - start
    record(
        "drl-machinery",
        shift_ok and target_ok and grad_ok,
        f"shift-invariance={shift_ok} double-target={target_ok} "
        f"grad rel err={rel.max():.1e}, {elapsed:.0f}s",
    )


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_drl_training(seed):
    """Trained agent ends near the budget and beats the random policy."""
    start = time.perf_counter()
    cfg = SystemConfig(2, (0.6, 0.8), (1.0, 1.0), 0.4, 0.5, 1.0, aoi_bound=None)
    drl_cfg = DrlConfig(
        tradeoff_v=100.0, hidden_sizes=(64, 64), learning_rate=3e-4,
        episodes=120, steps_per_episode=600, replay_capacity=30_000,
        target_sync=500, min_fill=600,
    )
    net, logs = train(cfg, drl_cfg, seed=seed)
    tail = logs[-max(1, len(logs) // 10):]
    late_tx = float(np.mean([l.mean_tx_per_slot for l in tail]))
    eval_seed = (900, seed)
    agent = simulate(QNetPolicy(net, drl_cfg), cfg, 30_000, seed=eval_seed)
    rand = simulate(RandomPolicy(), cfg, 30_000, seed=eval_seed)
    elapsed = time.perf_counter() - start
    ok = late_tx <= 1.05 and agent.ws_aaoi < rand.ws_aaoi and elapsed < 1200.0
    record(
        f"drl-training-seed{seed}",
        ok,
        f"late tx/slot={late_tx:.3f} (<=1.05), agent J={agent.ws_aaoi:.2f} < "
        f"random J={rand.ws_aaoi:.2f}, {elapsed:.0f}s",
    )


def test_complexity_scaling():
    """Per-sweep time grows at most ~linearly with states x actions."""
    rows = []
    for bound in (3, 4, 5, 6):
        cfg = SystemConfig(2, (0.5, 0.6), (1.0, 1.0), 0.7, 0.8, 1.0, aoi_bound=bound)
        kern = build_kernel(cfg)
        costs = cost_matrix(kern, 1.0, cfg)
        plan = ScanPlan(kern.indexer)
        betas = np.array([a.beta for a in kern.actions], dtype=np.int64)
        h = np.zeros(kern.num_states)
        for _ in range(3):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        reps = 20
        t0 = time.perf_counter()
        for _ in range(reps):
            _, h, _, _ = rvia_sweep(h, kern, costs, 0, plan, betas, True)
        rows.append((kern.num_states * kern.num_actions, (time.perf_counter() - t0) / reps))
    sizes = np.log([r[0] for r in rows])
    times = np.log([r[1] for r in rows])
    slope = float(np.polyfit(sizes, times, 1)[0])
    record(
        "complexity-scaling",
        slope <= 1.15,
        f"log-log slope of sweep time vs |S|*|A| = {slope:.3f} over bounds 3-6",
    )
