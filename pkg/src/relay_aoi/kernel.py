"""Exact transition kernel over the bounded age simplex.

The finite state space is the product over sources of the simplex
{(theta, x, y) : theta + x + y <= N}, which holds (N+1)(N+2)(N+3)/6 triples
per source rather than the full (N+1)^3 cube.  Transitions factor across
sources, so the joint kernel for an action is the Kronecker product of
per-source branch matrices; each per-source matrix comes from the closed
branch table below (at most 8 branches when both links address the source,
4 when one does, 2 when neither).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from relay_aoi.core import (
    Action,
    SourceState,
    SystemConfig,
    SystemState,
    clamp_to_bound,
    step,
    tilde_triplet,
    tx_cost,
)
from relay_aoi.rng import SimStreams

PROB_ATOL = 1e-12


class StateIndexer:
    """Dense indexing of the joint bounded state space.

    Per-source triples are enumerated lexicographically in (theta, x, y);
    joint indices are mixed-radix with source 1 most significant.  Index 0
    is therefore the all-fresh state.
    """

    def __init__(self, bound: int, num_sources: int):
        if bound < 2:
            raise ValueError("bound must be >= 2")
        self.bound = bound
        self.num_sources = num_sources
        triples: List[SourceState] = []
        for th in range(bound + 1):
            for x in range(bound + 1 - th):
                for y in range(bound + 1 - th - x):
                    triples.append(SourceState(th, x, y))
        self.triples = triples
        self.triple_index: Dict[SourceState, int] = {t: k for k, t in enumerate(triples)}
        self.per_source_count = len(triples)
        self.num_states = self.per_source_count**num_sources
        # radix weight of each source position (source 0 most significant)
        self._weights = [self.per_source_count ** (num_sources - 1 - i) for i in range(num_sources)]

    def encode(self, s: SystemState) -> int:
        idx = 0
        for src, w in zip(s, self._weights):
            idx += self.triple_index[src] * w
        return idx

    def decode(self, idx: int) -> SystemState:
        out = []
        for w in self._weights:
            k, idx = divmod(idx, w)
            out.append(self.triples[k])
        return tuple(out)

    def source_digits(self, indices: np.ndarray) -> np.ndarray:
        """(num_sources, len(indices)) per-source triple indices."""
        digits = np.empty((self.num_sources, len(indices)), dtype=np.int64)
        rest = np.asarray(indices, dtype=np.int64)
        for i, w in enumerate(self._weights):
            digits[i], rest = np.divmod(rest, w)
        return digits

    def coordinate_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-source-triple theta/x/y arrays, each of length per_source_count."""
        th = np.array([t.theta for t in self.triples], dtype=np.int64)
        x = np.array([t.x for t in self.triples], dtype=np.int64)
        y = np.array([t.y for t in self.triples], dtype=np.int64)
        return th, x, y


def expected_simplex_size(bound: int) -> int:
    return (bound + 1) * (bound + 2) * (bound + 3) // 6


def enumerate_states(cfg: SystemConfig) -> StateIndexer:
    """Dense index of the simplex-constrained joint space (bounded mode only)."""
    if not cfg.bounded:
        raise ValueError("state enumeration needs a bounded config")
    return StateIndexer(cfg.aoi_bound, cfg.num_sources)


def per_source_branches(
    src: SourceState,
    addressed: Tuple[bool, bool],
    cfg: SystemConfig,
    source_index: int,
) -> List[Tuple[SourceState, float]]:
    """Nonzero one-slot branches of a single source under an addressing pattern.

    ``addressed`` is (transmitter schedules this source, relay schedules this
    source).  Probabilities multiply the arrival factor with the relevant
    channel factors; branches that coincide after capping are merged.
    Returns (next_triple, probability) pairs.
    """
    if not cfg.bounded:
        raise ValueError("branch table is defined on the bounded space")
    mu = cfg.arrival_rates[source_index]
    p1, p2 = cfg.p1, cfg.p2
    tt, tx_, ty = tilde_triplet(src, cfg.aoi_bound)
    a_hit, b_hit = addressed

    if a_hit and b_hit:
        raw = [
            (mu * p1 * p2, (0, tt, tx_)),
            (mu * (1 - p1) * p2, (0, tx_ + tt, 0)),
            (mu * p1 * (1 - p2), (0, tt, ty + tx_)),
            (mu * (1 - p1) * (1 - p2), (0, tx_ + tt, ty)),
            ((1 - mu) * p1 * p2, (tt, 0, tx_)),
            ((1 - mu) * (1 - p1) * p2, (tt, tx_, 0)),
            ((1 - mu) * p1 * (1 - p2), (tt, 0, ty + tx_)),
            ((1 - mu) * (1 - p1) * (1 - p2), (tt, tx_, ty)),
        ]
    elif a_hit:
        raw = [
            (mu * p1, (0, tt, ty + tx_)),
            (mu * (1 - p1), (0, tx_ + tt, ty)),
            ((1 - mu) * p1, (tt, 0, ty + tx_)),
            ((1 - mu) * (1 - p1), (tt, tx_, ty)),
        ]
    elif b_hit:
        raw = [
            (mu * p2, (0, tx_ + tt, 0)),
            (mu * (1 - p2), (0, tx_ + tt, ty)),
            ((1 - mu) * p2, (tt, tx_, 0)),
            ((1 - mu) * (1 - p2), (tt, tx_, ty)),
        ]
    else:
        raw = [
            (mu, (0, tx_ + tt, ty)),
            (1 - mu, (tt, tx_, ty)),
        ]

    merged: Dict[SourceState, float] = {}
    for prob, triple in raw:
        if prob <= 0.0:
            continue
        nxt = SourceState(*triple)
        if nxt.theta + nxt.x + nxt.y > cfg.aoi_bound:
            # the branch table never composes past the cap; guard anyway
            nxt = clamp_to_bound((nxt,), cfg.aoi_bound)[0]
            _RECAP_EVENTS.append((src, addressed, source_index))
        merged[nxt] = merged.get(nxt, 0.0) + prob
    return sorted(merged.items(), key=lambda kv: kv[0])


# states where the guard above actually re-capped a composed coordinate;
# expected to stay empty (asserted by the kernel validity tests)
_RECAP_EVENTS: List[Tuple[SourceState, Tuple[bool, bool], int]] = []


def all_actions(num_sources: int) -> List[Action]:
    return [Action(a, b) for a in range(num_sources + 1) for b in range(num_sources + 1)]


@dataclass
class TransitionKernel:
    """Sparse successor lists for every (state, action) pair.

    ``matrices[k]`` is the row-stochastic CSR matrix of action
    ``actions[k]``; ``state_costs`` carries the weighted destination-age
    cost of each state and ``tx_costs`` the per-action transmission count.
    """

    indexer: Optional[StateIndexer]
    actions: List[Action]
    matrices: List[sp.csr_matrix]
    state_costs: np.ndarray
    tx_costs: np.ndarray
    recap_events: List = field(default_factory=list)

    @property
    def num_states(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def action_index(self, a: Action) -> int:
        return self.actions.index(a)

    def successors(self, state_idx: int, action_idx: int) -> List[Tuple[int, float]]:
        row = self.matrices[action_idx].getrow(state_idx)
        return list(zip(row.indices.tolist(), row.data.tolist()))

    def row_sum_error(self) -> float:
        worst = 0.0
        for m in self.matrices:
            sums = np.asarray(m.sum(axis=1)).ravel()
            worst = max(worst, float(np.abs(sums - 1.0).max()))
        return worst

    def max_branches(self) -> int:
        return max(int(np.diff(m.indptr).max()) for m in self.matrices)

    def export_text(self, path: str, max_states: Optional[int] = None) -> None:
        """Diagnostic dump: one `s,alpha,beta,next,prob` line per branch."""
        limit = self.num_states if max_states is None else min(max_states, self.num_states)
        with open(path, "w") as fh:
            fh.write("s_index,action_alpha,action_beta,next_index,prob\n")
            for a_idx, act in enumerate(self.actions):
                m = self.matrices[a_idx]
                for s_idx in range(limit):
                    for k in range(m.indptr[s_idx], m.indptr[s_idx + 1]):
                        fh.write(
                            f"{s_idx},{act.alpha},{act.beta},{m.indices[k]},{m.data[k]:.17g}\n"
                        )


def _pattern_matrix(cfg: SystemConfig, indexer: StateIndexer, source_index: int, a_hit: bool, b_hit: bool) -> sp.csr_matrix:
    m = indexer.per_source_count
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for k, triple in enumerate(indexer.triples):
        for nxt, prob in per_source_branches(triple, (a_hit, b_hit), cfg, source_index):
            rows.append(k)
            cols.append(indexer.triple_index[nxt])
            vals.append(prob)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def build_kernel(cfg: SystemConfig) -> TransitionKernel:
    """Joint kernel as Kronecker products of per-source branch matrices."""
    indexer = enumerate_states(cfg)
    _RECAP_EVENTS.clear()
    patterns = {}
    for i in range(cfg.num_sources):
        for a_hit in (False, True):
            for b_hit in (False, True):
                patterns[(i, a_hit, b_hit)] = _pattern_matrix(cfg, indexer, i, a_hit, b_hit)

    actions = all_actions(cfg.num_sources)
    matrices = []
    for act in actions:
        joint = None
        for i in range(cfg.num_sources):
            factor = patterns[(i, act.alpha == i + 1, act.beta == i + 1)]
            joint = factor if joint is None else sp.kron(joint, factor, format="csr")
        joint = sp.csr_matrix(joint)
        joint.sum_duplicates()
        matrices.append(joint)

    th, x, y = indexer.coordinate_arrays()
    delta = th + x + y
    m = indexer.per_source_count
    costs = np.zeros((m,) * cfg.num_sources)
    for i, w in enumerate(cfg.weights):
        shape = [1] * cfg.num_sources
        shape[i] = m
        costs = costs + w * delta.reshape(shape)
    tx_costs = np.array([tx_cost(a) for a in actions], dtype=float)
    return TransitionKernel(
        indexer=indexer,
        actions=actions,
        matrices=matrices,
        state_costs=costs.ravel(),
        tx_costs=tx_costs,
        recap_events=list(_RECAP_EVENTS),
    )


def accessible_state(cfg: SystemConfig) -> SystemState:
    """The state every deterministic policy can reach from anywhere.

    Sources that generate every slot end fresh-at-transmitter with the
    relay gap saturated, (0, N, 0); all others can starve to (N, 0, 0).
    """
    bound = cfg.aoi_bound
    return tuple(
        SourceState(0, bound, 0) if mu == 1.0 else SourceState(bound, 0, 0)
        for mu in cfg.arrival_rates
    )


def check_unichain(
    kernel: TransitionKernel, policy_actions: np.ndarray, cfg: SystemConfig
) -> Tuple[bool, Optional[int]]:
    """Whether the accessible state is reachable from every state under a policy.

    Runs reverse BFS from the accessible state over the policy-induced
    positive-probability graph; returns (ok, witness) with a state index
    that cannot reach it when the check fails.
    """
    indexer = kernel.indexer
    n = kernel.num_states
    target = indexer.encode(accessible_state(cfg))
    p_pi = policy_matrix(kernel, policy_actions)
    incoming = p_pi.T.tocsr()
    seen = np.zeros(n, dtype=bool)
    seen[target] = True
    frontier = [target]
    while frontier:
        nxt = []
        for s_idx in frontier:
            row = incoming.indices[incoming.indptr[s_idx] : incoming.indptr[s_idx + 1]]
            for pred in row:
                if not seen[pred]:
                    seen[pred] = True
                    nxt.append(pred)
        frontier = nxt
    if seen.all():
        return True, None
    return False, int(np.flatnonzero(~seen)[0])


def policy_matrix(kernel: TransitionKernel, policy_actions: np.ndarray) -> sp.csr_matrix:
    """Row s of the returned matrix is kernel row (s, policy_actions[s])."""
    n = kernel.num_states
    data: List[np.ndarray] = []
    indices: List[np.ndarray] = []
    rows: List[np.ndarray] = []
    pol = np.asarray(policy_actions)
    for a_idx in range(kernel.num_actions):
        mask = np.flatnonzero(pol == a_idx)
        if len(mask) == 0:
            continue
        sub = kernel.matrices[a_idx][mask]
        coo = sub.tocoo()
        rows.append(mask[coo.row])
        indices.append(coo.col)
        data.append(coo.data)
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(indices))),
        shape=(n, n),
    )


@dataclass
class ValidationReport:
    pairs_checked: int
    branches_checked: int
    violations: List[Tuple[int, int, int, float, float]]
    max_abs_z: float

    @property
    def ok(self) -> bool:
        return not self.violations


def monte_carlo_validate(
    kernel: TransitionKernel,
    cfg: SystemConfig,
    trials_per_pair: int,
    seed: int,
    pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> ValidationReport:
    """Cross-check kernel rows against the stochastic simulator.

    For each sampled (state, action), empirical one-step frequencies from
    the simulator must fall within four binomial standard errors of the
    kernel probability; landing on a state outside the kernel's support is
    an immediate violation.
    """
    indexer = kernel.indexer
    if pairs is None:
        gen = np.random.Generator(np.random.PCG64(seed))
        n_pairs = min(50, kernel.num_states * kernel.num_actions)
        pairs = [
            (int(gen.integers(kernel.num_states)), int(gen.integers(kernel.num_actions)))
            for _ in range(n_pairs)
        ]
    violations: List[Tuple[int, int, int, float, float]] = []
    max_z = 0.0
    branches = 0
    for pair_no, (s_idx, a_idx) in enumerate(pairs):
        state = indexer.decode(s_idx)
        action = kernel.actions[a_idx]
        counts: Dict[int, int] = {}
        streams = SimStreams((seed, pair_no))
        for _ in range(trials_per_pair):
            outcome = step(state, action, cfg, streams)
            k = indexer.encode(outcome.next_state)
            counts[k] = counts.get(k, 0) + 1
        expected = dict(kernel.successors(s_idx, a_idx))
        for k in counts:
            if k not in expected:
                violations.append((s_idx, a_idx, k, counts[k] / trials_per_pair, 0.0))
        for k, prob in expected.items():
            branches += 1
            emp = counts.get(k, 0) / trials_per_pair
            se = np.sqrt(prob * (1.0 - prob) / trials_per_pair)
            if se == 0.0:
                if emp != prob:
                    violations.append((s_idx, a_idx, k, emp, prob))
                continue
            z = abs(emp - prob) / se
            max_z = max(max_z, z)
            if z > 4.0:
                violations.append((s_idx, a_idx, k, emp, prob))
    return ValidationReport(len(pairs), branches, violations, max_z)
