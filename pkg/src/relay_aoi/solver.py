"""Average-cost CMDP solver via Lagrangian relaxation.

For a multiplier lam >= 0 the per-slot cost becomes
``aoi_cost(s) + lam * (tx_cost(a) - budget)`` and the relaxed problem is an
unconstrained average-cost MDP solved by relative value iteration (Jacobi
sweeps normalized at a reference state).  A bisection on lam then brackets
the budget: the upper endpoint yields a feasible near-optimal policy, the
lower endpoint an infeasible one whose cost lower-bounds the constrained
optimum.

The relay decision of an optimal policy is of switching type: once
forwarding source i is optimal at some hop-2 gap, it stays optimal at
every larger gap.  Sweeps can exploit this by scanning states in
increasing y order and pinning the relay decision whenever a smaller-y
state already chose it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from relay_aoi.core import Action, SystemConfig, SystemState, aoi_cost, tx_cost
from relay_aoi.kernel import StateIndexer, TransitionKernel, policy_matrix


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    zeta: float = 0.1
    epsilon: float = 1e-3
    lambda_lo: float = 0.0
    lambda_hi: float = 1.0
    s_ref: int = 0
    max_sweeps: int = 200_000
    max_bracket_doublings: int = 60
    stationary_tol: float = 1e-10
    max_power_iters: int = 2_000_000
    use_structure: bool = True

    def __post_init__(self):
        if self.zeta <= 0 or self.epsilon <= 0:
            raise ValueError("zeta and epsilon must be positive")
        if self.lambda_lo >= self.lambda_hi:
            raise ValueError("need lambda_lo < lambda_hi")


@dataclass
class PolicyTable:
    """Deterministic action per state plus solve provenance."""

    action_indices: np.ndarray
    actions: List[Action]
    lam: float
    sweeps: int
    bellman_residual: float

    def action_for(self, state_idx: int) -> Action:
        return self.actions[int(self.action_indices[state_idx])]

    def as_action_array(self) -> np.ndarray:
        return self.action_indices


@dataclass
class PolicyMetrics:
    ws_aaoi: float
    avg_tx: float
    stationary: np.ndarray
    power_iters: int


@dataclass
class RviaResult:
    policy: PolicyTable
    values: np.ndarray
    relative_values: np.ndarray
    lagrange_value: float
    sweeps: int
    final_span: float
    structure_conflicts: int


@dataclass
class BisectionResult:
    policy_plus: PolicyTable
    policy_minus: PolicyTable
    metrics_plus: PolicyMetrics
    metrics_minus: PolicyMetrics
    lambda_plus: float
    lambda_minus: float
    trace: List[Tuple[float, float, float]]
    constraint_slack: bool


def lagrangian_cost(s: SystemState, a: Action, lam: float, cfg: SystemConfig) -> float:
    """Per-slot relaxed cost: age cost plus lam times budget overshoot."""
    if lam < 0:
        raise ValueError("multiplier must be nonnegative")
    return aoi_cost(s, cfg) + lam * (tx_cost(a) - cfg.budget)


def cost_matrix(kernel: TransitionKernel, lam: float, cfg: SystemConfig) -> np.ndarray:
    """(num_states, num_actions) relaxed immediate costs."""
    return kernel.state_costs[:, None] + lam * (kernel.tx_costs[None, :] - cfg.budget)


class ScanPlan:
    """Precomputed y-level scan order for structure-aware sweeps.

    ``levels[L]`` holds the states whose hop-2 gaps sum to L; every state's
    predecessor along source i (its y_i decremented) sits one level lower,
    so claims of the relay decision propagate in a single pass.
    """

    def __init__(self, indexer: StateIndexer):
        self.indexer = indexer
        n = indexer.num_states
        num_sources = indexer.num_sources
        m = indexer.per_source_count
        th, x, y = indexer.coordinate_arrays()
        # per-source-triple index of the same triple with y decremented
        y_pred = np.full(m, -1, dtype=np.int64)
        for k, triple in enumerate(indexer.triples):
            if triple.y > 0:
                y_pred[k] = indexer.triple_index[triple._replace(y=triple.y - 1)]
        all_idx = np.arange(n, dtype=np.int64)
        digits = indexer.source_digits(all_idx)
        weights = np.array(
            [m ** (num_sources - 1 - i) for i in range(num_sources)], dtype=np.int64
        )
        self.pred = np.full((num_sources, n), -1, dtype=np.int64)
        level = np.zeros(n, dtype=np.int64)
        for i in range(num_sources):
            d = digits[i]
            level += y[d]
            ok = y_pred[d] >= 0
            self.pred[i, ok] = all_idx[ok] + (y_pred[d[ok]] - d[ok]) * weights[i]
        self.levels = [np.flatnonzero(level == L) for L in range(int(level.max()) + 1)]
        self.num_sources = num_sources


def _scan_argmin(
    q: np.ndarray, plan: ScanPlan, beta_of_action: np.ndarray, restrict: bool
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Greedy action per state, scanned in increasing y order.

    A source is *claimed* at a state when some lower-y state in this sweep
    already chose to forward it.  With ``restrict`` the minimization at a
    singly-claimed state only searches that relay decision (falling back,
    and counting a conflict, if that would lose value - which an optimal
    switching-type policy cannot cause).  Without ``restrict`` the full
    action set is searched.  Exact ties always resolve toward a claimed
    relay decision first and lexicographically smallest (alpha, beta)
    second, so both modes produce the same table and the emitted policy
    keeps the switching property on tie states.
    """
    num_sources = plan.num_sources
    n_alpha = num_sources + 1
    n = q.shape[0]
    pol = np.empty(n, dtype=np.int64)
    val = np.empty(n)
    # claimed[i, s]: beta = i+1 was chosen at or below s along y_i
    claimed = np.zeros((num_sources, n), dtype=bool)
    conflicts = 0
    cols_for_beta = [
        np.array([a * n_alpha + b for a in range(n_alpha)], dtype=np.int64)
        for b in range(n_alpha)
    ]
    for rows in plan.levels:
        if len(rows) == 0:
            continue
        claims = np.zeros((num_sources, len(rows)), dtype=bool)
        for i in range(num_sources):
            pred = plan.pred[i, rows]
            has = pred >= 0
            if has.any():
                claims[i, has] = claimed[i, pred[has]]
        n_claims = claims.sum(axis=0)

        sub = q[rows]
        full_val = sub.min(axis=1)
        pick = sub.argmin(axis=1)
        # canonical tie-break: a claimed relay decision wins whenever it
        # ties the full minimum (lowest claimed source first)
        resolved = np.zeros(len(rows), dtype=bool)
        restricted_val = {}
        restricted_arg = {}
        for i in range(num_sources):
            cand = claims[i]
            if not cand.any():
                continue
            cols = cols_for_beta[i + 1]
            sub_i = sub[np.ix_(cand, cols)]
            arg_i = sub_i.argmin(axis=1)
            val_i = sub_i[np.arange(len(arg_i)), arg_i]
            restricted_val[i] = val_i
            restricted_arg[i] = cols[arg_i]
            tie = (val_i == full_val[cand]) & ~resolved[cand]
            idx = np.flatnonzero(cand)[tie]
            pick[idx] = restricted_arg[i][tie]
            resolved[idx] = True

        if restrict:
            # singly-claimed states search only the claimed relay decision;
            # the restricted set is a subset of the full one, so its minimum
            # can only exceed the full minimum when the restriction excluded
            # every minimizer (a structure violation).  Ties were already
            # resolved to the restricted argmin above, so here only the
            # violations are counted; the full search repairs them.
            for i in range(num_sources):
                only = claims[i] & (n_claims == 1)
                if only.any():
                    worse = restricted_val[i][only[claims[i]]] > full_val[only]
                    conflicts += int(worse.sum())
            conflicts += int((n_claims >= 2).sum())

        pol[rows] = pick
        val[rows] = full_val
        for i in range(num_sources):
            claimed[i, rows] = claims[i] | (beta_of_action[pick] == i + 1)
    return pol, val, conflicts


def _q_values(kernel: TransitionKernel, costs: np.ndarray, h: np.ndarray) -> np.ndarray:
    q = np.empty_like(costs)
    for a_idx, mat in enumerate(kernel.matrices):
        q[:, a_idx] = costs[:, a_idx] + mat.dot(h)
    return q


def rvia_sweep(
    h: np.ndarray,
    kernel: TransitionKernel,
    costs: np.ndarray,
    s_ref: int,
    plan: Optional[ScanPlan] = None,
    beta_of_action: Optional[np.ndarray] = None,
    restrict: bool = False,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """One Jacobi sweep: returns (V, new h, greedy action indices, conflicts).

    Ties in the argmin break toward a relay decision claimed from below
    (when a scan plan is given), then toward the lexicographically
    smallest (alpha, beta); exact three-way ties therefore prefer idling.
    """
    q = _q_values(kernel, costs, h)
    if plan is None:
        pol = q.argmin(axis=1)
        val = q[np.arange(q.shape[0]), pol]
        conflicts = 0
    else:
        pol, val, conflicts = _scan_argmin(q, plan, beta_of_action, restrict)
    return val, val - val[s_ref], pol, conflicts


def solve_mdp(
    kernel: TransitionKernel,
    lam: float,
    cfg: SystemConfig,
    solver_cfg: SolverConfig = SolverConfig(),
    costs: Optional[np.ndarray] = None,
) -> RviaResult:
    """Relative value iteration at a fixed multiplier.

    Iterates Jacobi sweeps until consecutive relative values differ by at
    most epsilon everywhere, then extracts the greedy policy against the
    converged relative values.  ``costs`` overrides the Lagrangian cost
    matrix (used by tests with bespoke kernels).
    """
    if lam < 0:
        raise ValueError("multiplier must be nonnegative")
    if costs is None:
        costs = cost_matrix(kernel, lam, cfg)
    n = kernel.num_states
    s_ref = solver_cfg.s_ref
    plan = None
    beta_of_action = None
    if kernel.indexer is not None:
        plan = ScanPlan(kernel.indexer)
        beta_of_action = np.array([a.beta for a in kernel.actions], dtype=np.int64)
    restrict = solver_cfg.use_structure

    h = np.zeros(n)
    h_old = np.ones(n)
    sweeps = 0
    conflicts = 0
    values = np.zeros(n)
    while float(np.abs(h - h_old).max()) > solver_cfg.epsilon:
        if sweeps >= solver_cfg.max_sweeps:
            raise SolverError(
                f"RVIA did not converge in {sweeps} sweeps "
                f"(span {float(np.abs(h - h_old).max()):.3e} > {solver_cfg.epsilon})"
            )
        values, h_new, _, c = rvia_sweep(
            h, kernel, costs, s_ref, plan, beta_of_action, restrict
        )
        conflicts += c
        h_old, h = h, h_new
        sweeps += 1

    # greedy extraction against the converged relative values; the same
    # pass measures the Bellman residual of the returned (V, h) pair
    v_check, _, pol, c = rvia_sweep(
        h, kernel, costs, s_ref, plan, beta_of_action, restrict
    )
    conflicts += c
    residual = float(np.abs(values - v_check).max())
    policy = PolicyTable(
        action_indices=pol,
        actions=kernel.actions,
        lam=lam,
        sweeps=sweeps,
        bellman_residual=residual,
    )
    return RviaResult(
        policy=policy,
        values=values,
        relative_values=h,
        lagrange_value=float(values[s_ref]),
        sweeps=sweeps,
        final_span=float(np.abs(h - h_old).max()),
        structure_conflicts=conflicts,
    )


def evaluate_policy(
    kernel: TransitionKernel,
    policy: PolicyTable,
    cfg: SystemConfig,
    solver_cfg: SolverConfig = SolverConfig(),
) -> PolicyMetrics:
    """Long-run averages of a table policy from its stationary distribution.

    Power iteration on the policy-induced chain; the chain is unichain and
    aperiodic so the iteration contracts geometrically.
    """
    p_pi = policy_matrix(kernel, policy.action_indices)
    incoming = p_pi.T.tocsr()
    n = kernel.num_states
    mu = np.full(n, 1.0 / n)
    for it in range(solver_cfg.max_power_iters):
        nxt = incoming.dot(mu)
        err = float(np.abs(nxt - mu).sum())
        mu = nxt
        if err < solver_cfg.stationary_tol:
            break
    else:
        raise SolverError(f"power iteration stalled at L1 residual {err:.3e}")
    mu = mu / mu.sum()
    j = float(mu @ kernel.state_costs)
    d_bar = float(mu @ kernel.tx_costs[policy.action_indices])
    return PolicyMetrics(ws_aaoi=j, avg_tx=d_bar, stationary=mu, power_iters=it + 1)


def bisect(
    kernel: TransitionKernel,
    cfg: SystemConfig,
    solver_cfg: SolverConfig = SolverConfig(),
) -> BisectionResult:
    """Bracket the budget with a bisection over the multiplier.

    The average transmission count of the lam-optimal policy decreases in
    lam, so doubling the upper endpoint always finds a feasible policy.
    When even lam = 0 is feasible the constraint is slack and both
    returned policies coincide.
    """
    trace: List[Tuple[float, float, float]] = []

    def solve_and_eval(lam: float) -> Tuple[RviaResult, PolicyMetrics]:
        res = solve_mdp(kernel, lam, cfg, solver_cfg)
        met = evaluate_policy(kernel, res.policy, cfg, solver_cfg)
        trace.append((lam, met.ws_aaoi, met.avg_tx))
        return res, met

    res_lo, met_lo = solve_and_eval(solver_cfg.lambda_lo)
    if met_lo.avg_tx <= cfg.budget:
        return BisectionResult(
            policy_plus=res_lo.policy,
            policy_minus=res_lo.policy,
            metrics_plus=met_lo,
            metrics_minus=met_lo,
            lambda_plus=solver_cfg.lambda_lo,
            lambda_minus=solver_cfg.lambda_lo,
            trace=trace,
            constraint_slack=True,
        )

    lam_minus = solver_cfg.lambda_lo
    lam_plus = solver_cfg.lambda_hi
    res_hi, met_hi = solve_and_eval(lam_plus)
    doublings = 0
    while met_hi.avg_tx > cfg.budget:
        if doublings >= solver_cfg.max_bracket_doublings:
            raise SolverError(f"no feasible multiplier found up to {lam_plus}")
        lam_minus = lam_plus
        lam_plus *= 2.0
        res_hi, met_hi = solve_and_eval(lam_plus)
        doublings += 1

    while abs(lam_plus - lam_minus) >= solver_cfg.zeta:
        lam_bis = 0.5 * (lam_plus + lam_minus)
        _, met = solve_and_eval(lam_bis)
        if met.avg_tx > cfg.budget:
            lam_minus = lam_bis
        else:
            lam_plus = lam_bis

    res_plus, met_plus = solve_and_eval(lam_plus)
    res_minus, met_minus = solve_and_eval(lam_minus)
    return BisectionResult(
        policy_plus=res_plus.policy,
        policy_minus=res_minus.policy,
        metrics_plus=met_plus,
        metrics_minus=met_minus,
        lambda_plus=lam_plus,
        lambda_minus=lam_minus,
        trace=trace,
        constraint_slack=False,
    )


def _coordinate_successors(indexer: StateIndexer) -> List[np.ndarray]:
    """For each of the 3I coordinates, the joint index with it incremented
    (-1 where the increment leaves the simplex)."""
    n = indexer.num_states
    num_sources = indexer.num_sources
    m = indexer.per_source_count
    bound = indexer.bound
    incs = []
    for coord in range(3):
        nxt = np.full(m, -1, dtype=np.int64)
        for k, triple in enumerate(indexer.triples):
            bumped = list(triple)
            bumped[coord] += 1
            if sum(bumped) <= bound:
                nxt[k] = indexer.triple_index[tuple(bumped)]
        incs.append(nxt)
    all_idx = np.arange(n, dtype=np.int64)
    digits = indexer.source_digits(all_idx)
    weights = [m ** (num_sources - 1 - i) for i in range(num_sources)]
    out = []
    for i in range(num_sources):
        for coord in range(3):
            d = digits[i]
            succ = np.full(n, -1, dtype=np.int64)
            ok = incs[coord][d] >= 0
            succ[ok] = all_idx[ok] + (incs[coord][d[ok]] - d[ok]) * weights[i]
            out.append(succ)
    return out


def verify_switching(
    policy: PolicyTable, indexer: StateIndexer
) -> Tuple[bool, List[Tuple[int, int, int]]]:
    """Check the relay decision persists along every source's y direction.

    Returns (ok, violations) where each violation is (state, source label,
    offending higher-y state).  Checking single increments suffices: the
    property composes along a y chain.
    """
    betas = np.array([a.beta for a in policy.actions], dtype=np.int64)[policy.action_indices]
    succs = _coordinate_successors(indexer)
    violations: List[Tuple[int, int, int]] = []
    for i in range(indexer.num_sources):
        succ_y = succs[3 * i + 2]
        mask = (betas == i + 1) & (succ_y >= 0)
        idx = np.flatnonzero(mask)
        bad = idx[betas[succ_y[idx]] != i + 1]
        violations.extend((int(s), i + 1, int(succ_y[s])) for s in bad)
    return not violations, violations


def verify_value_monotonicity(
    values: np.ndarray, indexer: StateIndexer, tol: float = 1e-8
) -> Tuple[bool, List[Tuple[int, int]]]:
    """Check the value function never decreases along any age coordinate."""
    succs = _coordinate_successors(indexer)
    violations: List[Tuple[int, int]] = []
    for coord, succ in enumerate(succs):
        idx = np.flatnonzero(succ >= 0)
        bad = idx[values[succ[idx]] < values[idx] - tol]
        violations.extend((int(s), coord) for s in bad)
    return not violations, violations


def alpha_switching_report(policy: PolicyTable, indexer: StateIndexer) -> Tuple[int, int]:
    """Empirical regularity of the transmitter decision along x.

    The switching property is only proven for the relay side; this reports
    (states where alpha = i persists along x_i, total applicable states)
    without asserting anything.
    """
    alphas = np.array([a.alpha for a in policy.actions], dtype=np.int64)[policy.action_indices]
    succs = _coordinate_successors(indexer)
    holds = 0
    total = 0
    for i in range(indexer.num_sources):
        succ_x = succs[3 * i + 1]
        idx = np.flatnonzero((alphas == i + 1) & (succ_x >= 0))
        total += len(idx)
        holds += int((alphas[succ_x[idx]] == i + 1).sum())
    return holds, total


def config_digest(cfg: SystemConfig) -> str:
    """Stable hex digest of the environment parameters."""
    parts = [
        f"num_sources={cfg.num_sources}",
        "arrival_rates=" + ",".join(f"{m:.17g}" for m in cfg.arrival_rates),
        "weights=" + ",".join(f"{w:.17g}" for w in cfg.weights),
        f"p1={cfg.p1:.17g}",
        f"p2={cfg.p2:.17g}",
        f"budget={cfg.budget:.17g}",
        f"aoi_bound={cfg.aoi_bound}",
    ]
    return hashlib.sha256(";".join(parts).encode()).hexdigest()[:16]


def save_policy(path: str, policy: PolicyTable, cfg: SystemConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"#config-digest={config_digest(cfg)}\n")
        fh.write(f"#lambda={policy.lam:.17g}\n")
        fh.write(f"#bellman-residual={policy.bellman_residual:.17g}\n")
        fh.write("state_index,alpha,beta\n")
        for s_idx, a_idx in enumerate(policy.action_indices):
            act = policy.actions[int(a_idx)]
            fh.write(f"{s_idx},{act.alpha},{act.beta}\n")


def load_policy(path: str, cfg: SystemConfig, kernel: TransitionKernel) -> PolicyTable:
    """Read a policy file back; rejects files written for another config."""
    lam = float("nan")
    residual = float("nan")
    action_idx = np.zeros(kernel.num_states, dtype=np.int64)
    seen = np.zeros(kernel.num_states, dtype=bool)
    lookup = {(a.alpha, a.beta): k for k, a in enumerate(kernel.actions)}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line == "state_index,alpha,beta":
                continue
            if line.startswith("#config-digest="):
                digest = line.split("=", 1)[1]
                if digest != config_digest(cfg):
                    raise ValueError(
                        f"policy file {path} was written for a different config "
                        f"(digest {digest} != {config_digest(cfg)})"
                    )
                continue
            if line.startswith("#lambda="):
                lam = float(line.split("=", 1)[1])
                continue
            if line.startswith("#bellman-residual="):
                residual = float(line.split("=", 1)[1])
                continue
            s_str, a_str, b_str = line.split(",")
            s_idx = int(s_str)
            key = (int(a_str), int(b_str))
            if key not in lookup:
                raise ValueError(f"invalid action {key} in {path}")
            action_idx[s_idx] = lookup[key]
            seen[s_idx] = True
    if not seen.all():
        raise ValueError(f"policy file {path} does not cover all states")
    return PolicyTable(
        action_indices=action_idx,
        actions=kernel.actions,
        lam=lam,
        sweeps=0,
        bellman_residual=residual,
    )
