"""Simulation engine and the uniform policy interface.

Every policy exposes reset/decide/observe; the engine drives the loop
observe -> decide -> step -> update-internal-state -> log.  Runs are fully
determined by (config, seed): the environment consumes the named
substreams, policies only ever touch the exploration stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from relay_aoi.baselines import BaselineState, greedy_decide, random_decide
from relay_aoi.core import (
    Action,
    StepOutcome,
    SystemConfig,
    SystemState,
    clamp_to_bound,
    initial_state,
    step,
    tx_cost,
)
from relay_aoi.dpp import DppConfig, decide as dpp_decide, queue_update
from relay_aoi.drl import DrlConfig, QNetwork, encode_observation
from relay_aoi.kernel import StateIndexer, all_actions
from relay_aoi.rng import SimStreams
from relay_aoi.solver import PolicyTable


class Policy:
    """Base policy handle; subclasses own whatever per-run state they need."""

    name = "policy"

    def reset(self, cfg: SystemConfig, streams: SimStreams) -> None:
        pass

    def decide(self, state: SystemState) -> Action:
        raise NotImplementedError

    def observe(self, action: Action, outcome: StepOutcome) -> None:
        pass

    @property
    def backlog(self) -> Optional[float]:
        """Virtual-queue level, for policies that keep one."""
        return None


class TablePolicy(Policy):
    """Bounded-model lookup policy; clamps unbounded states before lookup."""

    def __init__(self, table: PolicyTable, indexer: StateIndexer, name: str = "table"):
        self.table = table
        self.indexer = indexer
        self.name = name

    def decide(self, state: SystemState) -> Action:
        state = clamp_to_bound(state, self.indexer.bound)
        return self.table.action_for(self.indexer.encode(state))


class DppPolicy(Policy):
    name = "dpp"

    def __init__(self, dpp_cfg: DppConfig):
        self.dpp_cfg = dpp_cfg
        self.h = 0.0
        self._cfg: Optional[SystemConfig] = None

    def reset(self, cfg: SystemConfig, streams: SimStreams) -> None:
        self.h = 0.0
        self._cfg = cfg

    def decide(self, state: SystemState) -> Action:
        return dpp_decide(state, self.h, self._cfg, self.dpp_cfg)

    def observe(self, action: Action, outcome: StepOutcome) -> None:
        self.h = queue_update(self.h, action, self._cfg.budget)

    @property
    def backlog(self) -> Optional[float]:
        return self.h


class GreedyPolicy(Policy):
    name = "greedy"

    def __init__(self):
        self.state = BaselineState()
        self._budget = 0.0

    def reset(self, cfg: SystemConfig, streams: SimStreams) -> None:
        self.state = BaselineState()
        self._budget = cfg.budget

    def decide(self, state: SystemState) -> Action:
        return greedy_decide(state, self.state, self._budget)


class RandomPolicy(Policy):
    name = "random"

    def __init__(self):
        self._stream = None
        self._num_sources = 0

    def reset(self, cfg: SystemConfig, streams: SimStreams) -> None:
        self._stream = streams.exploration
        self._num_sources = cfg.num_sources

    def decide(self, state: SystemState) -> Action:
        return random_decide(self._stream, self._num_sources)


class QNetPolicy(Policy):
    """Frozen Q-network acting greedily on the queue-augmented state."""

    name = "drl"

    def __init__(self, net: QNetwork, drl_cfg: DrlConfig):
        self.net = net
        self.drl_cfg = drl_cfg
        self.h = 0.0
        self._cfg: Optional[SystemConfig] = None
        self._actions: List[Action] = []

    def reset(self, cfg: SystemConfig, streams: SimStreams) -> None:
        self.h = 0.0
        self._cfg = cfg
        self._actions = all_actions(cfg.num_sources)

    def decide(self, state: SystemState) -> Action:
        obs = encode_observation(state, self.h, self._cfg, self.drl_cfg)
        q = self.net.forward(obs[None])[0]
        return self._actions[int(np.argmax(q))]

    def observe(self, action: Action, outcome: StepOutcome) -> None:
        self.h = queue_update(self.h, action, self._cfg.budget)

    @property
    def backlog(self) -> Optional[float]:
        return self.h


class IdlePolicy(Policy):
    name = "idle"

    def decide(self, state: SystemState) -> Action:
        return Action(0, 0)


@dataclass
class RunMetrics:
    """Cesaro means over the whole run plus a sampled running-mean series."""

    policy: str
    horizon: int
    seed: object
    ws_aaoi: float
    tx_mean: float
    h_mean: Optional[float]
    ws_aaoi_last_window: float
    tx_last_window: float
    per_source_aaoi: Tuple[float, ...]
    lagrangian_mean: Optional[float]
    series_slots: np.ndarray = field(repr=False, default=None)
    series_ws_running: np.ndarray = field(repr=False, default=None)
    series_tx_running: np.ndarray = field(repr=False, default=None)
    series_h: Optional[np.ndarray] = field(repr=False, default=None)


def simulate(
    policy: Policy,
    cfg: SystemConfig,
    horizon: int,
    seed,
    log_every: Optional[int] = None,
    lagrangian_lambda: Optional[float] = None,
) -> RunMetrics:
    """Run one policy for `horizon` slots; deterministic given the seed.

    Dynamics follow cfg.aoi_bound (bounded or raw).  Per-slot cost is the
    weighted destination age of the post-step state, so the all-fresh
    start state contributes nothing.  When ``lagrangian_lambda`` is given
    the relaxed cost C + lam*(D - budget) is averaged too.
    """
    if log_every is None:
        log_every = max(1, horizon // 200)
    streams = SimStreams(seed)
    policy.reset(cfg, streams)
    state = initial_state(cfg)
    weights = cfg.weights
    num_sources = cfg.num_sources

    cum_cost = 0.0
    cum_tx = 0
    cum_h = 0.0
    track_h = policy.backlog is not None
    cum_per_source = [0.0] * num_sources
    window_start = horizon - max(1, horizon // 10)
    win_cost = 0.0
    win_tx = 0

    slots: List[int] = []
    ws_running: List[float] = []
    tx_running: List[float] = []
    h_series: List[float] = []

    for t in range(1, horizon + 1):
        action = policy.decide(state)
        outcome = step(state, action, cfg, streams)
        policy.observe(action, outcome)
        state = outcome.next_state

        slot_cost = 0.0
        for i in range(num_sources):
            src = state[i]
            age = src.theta + src.x + src.y
            cum_per_source[i] += age
            slot_cost += weights[i] * age
        cum_cost += slot_cost
        cum_tx += outcome.tx_cost
        if track_h:
            cum_h += policy.backlog
        if t > window_start:
            win_cost += slot_cost
            win_tx += outcome.tx_cost
        if t % log_every == 0 or t == horizon:
            slots.append(t)
            ws_running.append(cum_cost / t)
            tx_running.append(cum_tx / t)
            if track_h:
                h_series.append(policy.backlog)

    window = horizon - window_start
    lag_mean = None
    if lagrangian_lambda is not None:
        lag_mean = cum_cost / horizon + lagrangian_lambda * (cum_tx / horizon - cfg.budget)
    return RunMetrics(
        policy=policy.name,
        horizon=horizon,
        seed=seed,
        ws_aaoi=cum_cost / horizon,
        tx_mean=cum_tx / horizon,
        h_mean=(cum_h / horizon) if track_h else None,
        ws_aaoi_last_window=win_cost / window,
        tx_last_window=win_tx / window,
        per_source_aaoi=tuple(c / horizon for c in cum_per_source),
        lagrangian_mean=lag_mean,
        series_slots=np.array(slots, dtype=np.int64),
        series_ws_running=np.array(ws_running),
        series_tx_running=np.array(tx_running),
        series_h=np.array(h_series) if track_h else None,
    )


def write_timeseries_csv(path: str, metrics: RunMetrics) -> None:
    with_h = metrics.series_h is not None
    header = "slot,ws_aaoi_running,tx_running" + (",h" if with_h else "")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k in range(len(metrics.series_slots)):
            row = (
                f"{metrics.series_slots[k]},{metrics.series_ws_running[k]:.17g},"
                f"{metrics.series_tx_running[k]:.17g}"
            )
            if with_h:
                row += f",{metrics.series_h[k]:.17g}"
            fh.write(row + "\n")


def write_summary_csv(path: str, runs: Sequence[RunMetrics]) -> None:
    with open(path, "w") as fh:
        fh.write("policy,horizon,ws_aaoi,tx_mean,ws_aaoi_last_window,tx_last_window,h_mean\n")
        for m in runs:
            h_val = "" if m.h_mean is None else f"{m.h_mean:.17g}"
            fh.write(
                f"{m.policy},{m.horizon},{m.ws_aaoi:.17g},{m.tx_mean:.17g},"
                f"{m.ws_aaoi_last_window:.17g},{m.tx_last_window:.17g},{h_val}\n"
            )
