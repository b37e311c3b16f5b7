import numpy as np
import pytest
import scipy.sparse as sp

from relay_aoi.core import Action, SourceState, SystemConfig, tx_cost
from relay_aoi.kernel import TransitionKernel, build_kernel
from relay_aoi.solver import (
    PolicyTable,
    SolverConfig,
    SolverError,
    bisect,
    config_digest,
    cost_matrix,
    evaluate_policy,
    lagrangian_cost,
    load_policy,
    save_policy,
    solve_mdp,
    verify_switching,
    verify_value_monotonicity,
)
from relay_aoi.harness import TablePolicy, simulate


def toy_kernel(matrices, actions, state_costs, tx_costs):
    return TransitionKernel(
        indexer=None,
        actions=actions,
        matrices=[sp.csr_matrix(m) for m in matrices],
        state_costs=np.asarray(state_costs, dtype=float),
        tx_costs=np.asarray(tx_costs, dtype=float),
    )


class TestLagrangianCost:
    def test_examples(self):
        cfg = SystemConfig(2, (0.5, 0.5), (1.0, 1.0), 0.5, 0.5, 1.0)
        s = ((SourceState(1, 2, 3)), (SourceState(0, 1, 1)))  # cost 8
        assert lagrangian_cost(s, Action(1, 0), 2.0, cfg) == pytest.approx(8.0)
        assert lagrangian_cost(s, Action(1, 2), 0.0, cfg) == pytest.approx(8.0)
        cfg2 = SystemConfig(1, (0.5,), (1.0,), 0.5, 0.5, 1.2)
        zero = (SourceState(0, 0, 0),)
        assert lagrangian_cost(zero, Action(0, 0), 5.0, cfg2) == pytest.approx(-6.0)

    def test_rejects_negative_multiplier(self):
        cfg = SystemConfig(1, (0.5,), (1.0,), 0.5, 0.5, 1.0)
        with pytest.raises(ValueError):
            lagrangian_cost((SourceState(0, 0, 0),), Action(0, 0), -0.1, cfg)


class TestRviaToyKernels:
    def test_single_state_picks_cheaper_action(self):
        cfg = SystemConfig(1, (0.5,), (1.0,), 0.5, 0.5, 1.0)
        kern = toy_kernel(
            matrices=[np.array([[1.0]]), np.array([[1.0]])],
            actions=[Action(0, 0), Action(1, 0)],
            state_costs=[0.0],
            tx_costs=[0.0, 1.0],
        )
        costs = np.array([[1.0, 2.0]])
        res = solve_mdp(kern, 0.0, cfg, SolverConfig(epsilon=1e-9), costs=costs)
        assert res.policy.action_indices[0] == 0
        assert res.relative_values[0] == 0.0
        assert res.lagrange_value == pytest.approx(1.0)

    def test_nonconvergence_raises_with_span(self):
        cfg = SystemConfig(1, (0.5,), (1.0,), 0.5, 0.5, 1.0)
        # two-state deterministic cycle with asymmetric costs keeps the
        # relative values oscillating under Jacobi sweeps
        flip = np.array([[0.0, 1.0], [1.0, 0.0]])
        kern = toy_kernel([flip], [Action(0, 0)], [0.0, 1.0], [0.0])
        with pytest.raises(SolverError, match="span"):
            solve_mdp(kern, 0.0, cfg, SolverConfig(epsilon=1e-12, max_sweeps=50))


class TestEvaluatePolicy:
    def test_two_state_uniform_chain(self):
        cfg = SystemConfig(1, (0.5,), (1.0,), 0.5, 0.5, 1.0)
        uniform = np.full((2, 2), 0.5)
        kern = toy_kernel([uniform], [Action(0, 0)], [1.0, 3.0], [0.0])
        pol = PolicyTable(np.zeros(2, dtype=np.int64), kern.actions, 0.0, 0, 0.0)
        met = evaluate_policy(kern, pol, cfg)
        assert met.stationary == pytest.approx([0.5, 0.5], abs=1e-9)
        assert met.ws_aaoi == pytest.approx(2.0)

    def test_all_idle_has_zero_tx(self, tiny_cfg):
        kern = build_kernel(tiny_cfg)
        idle_idx = kern.action_index(Action(0, 0))
        pol = PolicyTable(
            np.full(kern.num_states, idle_idx, dtype=np.int64), kern.actions, 0.0, 0, 0.0
        )
        met = evaluate_policy(kern, pol, tiny_cfg)
        assert met.avg_tx == 0.0
        assert met.stationary.sum() == pytest.approx(1.0, abs=1e-9)


class TestSolveMdp:
    def test_structured_matches_unstructured(self, small_cfg):
        kern = build_kernel(small_cfg)
        for lam in (0.0, 0.5, 2.0):
            a = solve_mdp(kern, lam, small_cfg, SolverConfig(use_structure=True))
            b = solve_mdp(kern, lam, small_cfg, SolverConfig(use_structure=False))
            assert np.array_equal(a.policy.action_indices, b.policy.action_indices)
            assert np.abs(a.values - b.values).max() <= 1e-10
            assert a.structure_conflicts == 0

    def test_bellman_residual_below_epsilon(self, small_cfg):
        kern = build_kernel(small_cfg)
        for lam in (0.0, 1.0):
            res = solve_mdp(kern, lam, small_cfg, SolverConfig(epsilon=1e-3))
            assert res.policy.bellman_residual <= 1e-3

    def test_huge_multiplier_idles_everywhere(self, small_cfg):
        kern = build_kernel(small_cfg)
        res = solve_mdp(kern, 1e6, small_cfg, SolverConfig())
        idle_idx = kern.action_index(Action(0, 0))
        assert (res.policy.action_indices == idle_idx).all()

    def test_simulated_lagrangian_matches_reference_value(self, tiny_cfg):
        kern = build_kernel(tiny_cfg)
        lam = 0.5
        res = solve_mdp(kern, lam, tiny_cfg, SolverConfig(epsilon=1e-6))
        pol = TablePolicy(res.policy, kern.indexer)
        metrics = simulate(pol, tiny_cfg, 300_000, seed=11, lagrangian_lambda=lam)
        assert metrics.lagrangian_mean == pytest.approx(res.lagrange_value, rel=0.02)


class TestBisect:
    def test_slack_when_budget_cannot_bind(self, tiny_cfg):
        cfg = SystemConfig(1, (0.5,), (1.0,), 0.7, 0.8, 2.0, aoi_bound=3)
        kern = build_kernel(cfg)
        res = bisect(kern, cfg, SolverConfig())
        assert res.constraint_slack
        assert np.array_equal(
            res.policy_plus.action_indices, res.policy_minus.action_indices
        )

    def test_sandwich_and_trace_monotone(self, small_cfg):
        kern = build_kernel(small_cfg)
        res = bisect(kern, small_cfg, SolverConfig(zeta=0.1))
        assert not res.constraint_slack
        assert res.metrics_plus.avg_tx <= small_cfg.budget
        assert res.metrics_minus.avg_tx > small_cfg.budget
        assert res.metrics_minus.ws_aaoi <= res.metrics_plus.ws_aaoi + 1e-9
        by_lam = sorted(res.trace)
        for (l1, j1, d1), (l2, j2, d2) in zip(by_lam, by_lam[1:]):
            assert d2 <= d1 + 1e-9
            assert j2 >= j1 - 1e-9

    def test_zero_multiplier_transmits_most(self, small_cfg):
        kern = build_kernel(small_cfg)
        res = bisect(kern, small_cfg, SolverConfig())
        lams = [t[0] for t in res.trace]
        dbars = [t[2] for t in res.trace]
        assert lams[0] == 0.0
        assert dbars[0] == max(dbars)


class TestStructureChecks:
    def test_solved_policies_pass(self, small_cfg):
        kern = build_kernel(small_cfg)
        for lam in (0.5, 1.25):
            res = solve_mdp(kern, lam, small_cfg, SolverConfig())
            ok, violations = verify_switching(res.policy, kern.indexer)
            assert ok, violations[:5]
            ok, violations = verify_value_monotonicity(res.values, kern.indexer)
            assert ok, violations[:5]

    def test_random_policy_violates_switching(self, small_cfg):
        kern = build_kernel(small_cfg)
        gen = np.random.default_rng(0)
        pol = PolicyTable(
            gen.integers(kern.num_actions, size=kern.num_states),
            kern.actions, 0.0, 0, 0.0,
        )
        ok, violations = verify_switching(pol, kern.indexer)
        assert not ok and violations

    def test_idle_relay_imposes_no_constraint(self, small_cfg):
        kern = build_kernel(small_cfg)
        alpha_only = kern.action_index(Action(1, 0))
        pol = PolicyTable(
            np.full(kern.num_states, alpha_only, dtype=np.int64),
            kern.actions, 0.0, 0, 0.0,
        )
        ok, violations = verify_switching(pol, kern.indexer)
        assert ok and not violations

    def test_constant_values_are_monotone(self, small_cfg):
        kern = build_kernel(small_cfg)
        ok, _ = verify_value_monotonicity(np.zeros(kern.num_states), kern.indexer)
        assert ok

    def test_negated_cost_fails_monotonicity(self, small_cfg):
        kern = build_kernel(small_cfg)
        ok, violations = verify_value_monotonicity(-kern.state_costs, kern.indexer)
        assert not ok and violations


class TestPolicyPersistence:
    def test_round_trip(self, tiny_cfg, tmp_path):
        kern = build_kernel(tiny_cfg)
        res = solve_mdp(kern, 0.7, tiny_cfg, SolverConfig())
        path = tmp_path / "policy.csv"
        save_policy(str(path), res.policy, tiny_cfg)
        loaded = load_policy(str(path), tiny_cfg, kern)
        assert np.array_equal(loaded.action_indices, res.policy.action_indices)
        assert loaded.lam == res.policy.lam
        assert loaded.bellman_residual == res.policy.bellman_residual

    def test_rejects_digest_mismatch(self, tiny_cfg, tmp_path):
        kern = build_kernel(tiny_cfg)
        res = solve_mdp(kern, 0.7, tiny_cfg, SolverConfig())
        path = tmp_path / "policy.csv"
        save_policy(str(path), res.policy, tiny_cfg)
        other = SystemConfig(1, (0.6,), (1.0,), 0.7, 0.8, 1.0, aoi_bound=3)
        with pytest.raises(ValueError, match="different config"):
            load_policy(str(path), other, kern)

    def test_digest_changes_with_parameters(self, tiny_cfg):
        other = SystemConfig(1, (0.5,), (1.0,), 0.7, 0.8, 1.1, aoi_bound=3)
        assert config_digest(tiny_cfg) != config_digest(other)


def test_cost_matrix_shape(small_cfg):
    kern = build_kernel(small_cfg)
    lc = cost_matrix(kern, 2.0, small_cfg)
    assert lc.shape == (kern.num_states, kern.num_actions)
    idle = kern.action_index(Action(0, 0))
    both = kern.action_index(Action(1, 1))
    assert lc[0, both] - lc[0, idle] == pytest.approx(2.0 * 2)
