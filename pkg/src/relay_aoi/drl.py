"""Dueling double Q-learning on the queue-augmented state.

The agent observes (state, H) where H is the budget virtual queue, and is
rewarded with the negated Lyapunov drift of H plus V times the weighted
destination ages, so maximizing reward trades age against budget
violations.  The network is a plain dense stack with two linear heads
(state value and per-action advantages) aggregated as
Q = value + advantage - mean(advantage); targets are double targets: the
online net picks the argmax, the slow target net scores it.  Network,
backprop and the RMSProp-style optimizer are implemented here directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from relay_aoi.core import SystemConfig, aoi_cost, initial_state, step, tx_cost
from relay_aoi.dpp import queue_update
from relay_aoi.kernel import all_actions
from relay_aoi.rng import SimStreams


@dataclass(frozen=True)
class DrlConfig:
    tradeoff_v: float = 100.0
    discount: float = 0.99
    hidden_sizes: Tuple[int, ...] = (512, 256)
    learning_rate: float = 1e-4
    batch_size: int = 64
    replay_capacity: int = 100_000
    target_sync: int = 1_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: Optional[int] = None  # default: first 20% of all steps
    steps_per_episode: int = 600
    episodes: int = 300
    state_scale: float = 50.0
    grad_clip: float = 10.0
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    min_fill: int = 1_000
    train_every: int = 1
    # multiplies rewards inside the TD loss only; rescaling every reward by
    # a positive constant rescales Q* identically and leaves argmax policies
    # unchanged, but keeps targets within reach of the value head
    reward_scale: float = 1e-3
    # restart the trajectory (fresh ages, empty queue) every this many
    # episodes so the replay keeps covering the near-empty-queue states a
    # frozen policy must handle at the start of a rollout; 0 never restarts.
    # restarts stop after restart_fraction of the episodes so the final
    # stretch shows steady behavior (each restart is followed by a
    # backlog-rebuild transient that overshoots the budget)
    restart_period: int = 10
    restart_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.eps_start < self.eps_end:
            raise ValueError("exploration schedule must not increase")
        for name in ("learning_rate", "batch_size", "replay_capacity", "state_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode

    def decay_steps(self) -> int:
        if self.eps_decay_steps is not None:
            return self.eps_decay_steps
        return max(1, self.total_steps() // 5)


class QNetwork:
    """Dense ReLU trunk with dueling value/advantage heads (float64)."""

    def __init__(self, input_dim: int, hidden_sizes: Sequence[int], num_actions: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.num_actions = num_actions
        self.params: Dict[str, np.ndarray] = {}
        sizes = [input_dim, *hidden_sizes]
        for l in range(len(hidden_sizes)):
            self.params[f"W{l}"] = _uniform_init(rng, sizes[l], sizes[l + 1])
            self.params[f"b{l}"] = np.zeros(sizes[l + 1])
        last = sizes[-1]
        self.params["Wv"] = _uniform_init(rng, last, 1)
        self.params["bv"] = np.zeros(1)
        self.params["Wa"] = _uniform_init(rng, last, num_actions)
        self.params["ba"] = np.zeros(num_actions)

    @property
    def num_hidden(self) -> int:
        return len(self.hidden_sizes)

    def forward(self, x: np.ndarray) -> np.ndarray:
        q, _ = self.forward_cached(x)
        return q

    def forward_cached(self, x: np.ndarray):
        acts = [np.asarray(x, dtype=float)]
        pre = []
        a = acts[0]
        for l in range(self.num_hidden):
            z = a @ self.params[f"W{l}"] + self.params[f"b{l}"]
            a = np.maximum(z, 0.0)
            pre.append(z)
            acts.append(a)
        value = a @ self.params["Wv"] + self.params["bv"]
        adv = a @ self.params["Wa"] + self.params["ba"]
        q = value + adv - adv.mean(axis=1, keepdims=True)
        return q, (acts, pre, value, adv)

    def backward(self, cache, dq: np.ndarray) -> Dict[str, np.ndarray]:
        acts, pre, _, _ = cache
        grads: Dict[str, np.ndarray] = {}
        dsum = dq.sum(axis=1, keepdims=True)
        dvalue = dsum
        dadv = dq - dsum / self.num_actions
        top = acts[-1]
        grads["Wv"] = top.T @ dvalue
        grads["bv"] = dvalue.sum(axis=0)
        grads["Wa"] = top.T @ dadv
        grads["ba"] = dadv.sum(axis=0)
        da = dvalue @ self.params["Wv"].T + dadv @ self.params["Wa"].T
        for l in range(self.num_hidden - 1, -1, -1):
            dz = da * (pre[l] > 0.0)
            grads[f"W{l}"] = acts[l].T @ dz
            grads[f"b{l}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{l}"].T
        return grads

    def copy_from(self, other: "QNetwork") -> None:
        for k, v in other.params.items():
            self.params[k] = v.copy()

    def clone(self) -> "QNetwork":
        twin = QNetwork.__new__(QNetwork)
        twin.input_dim = self.input_dim
        twin.hidden_sizes = self.hidden_sizes
        twin.num_actions = self.num_actions
        twin.params = {k: v.copy() for k, v in self.params.items()}
        return twin

    # flat views used by the finite-difference gradient checks
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for k in sorted(self.params):
            size = self.params[k].size
            self.params[k] = flat[pos : pos + size].reshape(self.params[k].shape).copy()
            pos += size


def _uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def reward(h: float, h_next: float, dest_ages: Sequence[float],
           weights: Sequence[float], tradeoff_v: float) -> float:
    """Negated drift-plus-penalty: -(H'^2/2 - H^2/2 + V * sum w_i * age_i')."""
    drift = 0.5 * h_next * h_next - 0.5 * h * h
    penalty = tradeoff_v * sum(w * d for w, d in zip(weights, dest_ages))
    return -(drift + penalty)


def double_q_target(r: float, discount: float, online_next: np.ndarray,
                    target_next: np.ndarray) -> float:
    """Bootstrapped target with the online argmax scored by the target net."""
    a_star = int(np.argmax(online_next))
    return r + discount * float(target_next[a_star])


class ReplayBuffer:
    """Ring buffer over transitions; batches sample uniformly without
    replacement.

    The terminal flag exists for the standard bootstrap cutoff but stays
    false here: episodes truncate a continuing task, they do not end it.
    """

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._pos = 0

    def push(self, state, action: int, r: float, next_state, terminal: bool = False) -> None:
        k = self._pos
        self.states[k] = state
        self.actions[k] = action
        self.rewards[k] = r
        self.next_states[k] = next_state
        self.terminals[k] = terminal
        self._pos = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch, replace=False)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )


class RmsProp:
    """Decaying mean of squared gradients; step divides by its root."""

    def __init__(self, net: QNetwork, lr: float, decay: float, eps: float):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.cache = {k: np.zeros_like(v) for k, v in net.params.items()}

    def apply(self, net: QNetwork, grads: Dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            c = self.cache[k]
            c *= self.decay
            c += (1.0 - self.decay) * g * g
            net.params[k] -= self.lr * g / (np.sqrt(c) + self.eps)


def clip_gradients(grads: Dict[str, np.ndarray], threshold: float) -> float:
    """Scale all gradients so their joint L2 norm is at most the threshold."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if threshold > 0 and norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class Trainer:
    """Owns the online/target pair, replay, and optimizer state."""

    online: QNetwork
    target: QNetwork
    buffer: ReplayBuffer
    opt: RmsProp
    cfg: DrlConfig
    train_steps: int = 0

    def train_step(self, rng: np.random.Generator) -> float:
        """One batch update; returns the batch loss.

        Squared error between online Q(s, a) and the double targets, hard
        target copy on the sync period.  A non-finite loss aborts with the
        offending batch statistics.
        """
        cfg = self.cfg
        states, actions, rewards, next_states, terminals = self.buffer.sample(
            cfg.batch_size, rng
        )
        online_next = self.online.forward(next_states)
        target_next = self.target.forward(next_states)
        a_star = online_next.argmax(axis=1)
        targets = (
            rewards * cfg.reward_scale
            + cfg.discount * ~terminals * target_next[np.arange(len(a_star)), a_star]
        )
        q, cache = self.online.forward_cached(states)
        chosen = q[np.arange(len(actions)), actions]
        td = chosen - targets
        loss = float((td * td).mean())
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss {loss}; |td| max {np.abs(td).max()}, "
                f"reward range [{rewards.min()}, {rewards.max()}]"
            )
        dq = np.zeros_like(q)
        dq[np.arange(len(actions)), actions] = 2.0 * td / len(actions)
        grads = self.online.backward(cache, dq)
        clip_gradients(grads, cfg.grad_clip)
        self.opt.apply(self.online, grads)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync == 0:
            self.target.copy_from(self.online)
        return loss


@dataclass
class EpisodeLog:
    episode: int
    episodic_reward: float
    mean_tx_per_slot: float
    ws_aaoi: float
    mean_loss: float
    epsilon: float


def encode_observation(state, h: float, cfg: SystemConfig, drl_cfg: DrlConfig) -> np.ndarray:
    """Flatten (state, H) and normalize onto a trainable scale."""
    scale = drl_cfg.state_scale
    out = np.empty(3 * cfg.num_sources + 1)
    for i, src in enumerate(state):
        out[3 * i] = src.theta / scale
        out[3 * i + 1] = src.x / scale
        out[3 * i + 2] = src.y / scale
    out[-1] = h / (cfg.budget * scale)
    return out


def epsilon_at(global_step: int, cfg: DrlConfig) -> float:
    frac = min(1.0, global_step / cfg.decay_steps())
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def train(
    cfg: SystemConfig,
    drl_cfg: DrlConfig,
    seed: int,
    log_hook=None,
) -> Tuple[QNetwork, List[EpisodeLog]]:
    """Full training run; ages evolve unbounded, H by the queue recursion.

    Environment noise comes from the named simulation streams so that the
    arrival process is identical across seeds regardless of exploration;
    learner randomness (weights, exploration, replay) is a separate stream.
    Returns the online network and per-episode logs.
    """
    if cfg.bounded:
        cfg = cfg.with_bound(None)
    streams = SimStreams(seed)
    learner_rng = np.random.default_rng((seed, 0xD3))
    actions = all_actions(cfg.num_sources)
    num_actions = len(actions)
    state_dim = 3 * cfg.num_sources + 1
    online = QNetwork(state_dim, drl_cfg.hidden_sizes, num_actions, learner_rng)
    target = online.clone()
    trainer = Trainer(
        online=online,
        target=target,
        buffer=ReplayBuffer(drl_cfg.replay_capacity, state_dim),
        opt=RmsProp(online, drl_cfg.learning_rate, drl_cfg.rmsprop_decay, drl_cfg.rmsprop_eps),
        cfg=drl_cfg,
    )
    logs: List[EpisodeLog] = []
    global_step = 0
    # one continuing trajectory: episodes are logging/truncation windows,
    # so the backlog reaches and holds its working level instead of being
    # wiped before it can ever throttle the policy; sparse restarts keep
    # the empty-queue start region represented in the replay buffer
    state = initial_state(cfg)
    h = 0.0
    restart_until = int(drl_cfg.restart_fraction * drl_cfg.episodes)
    for ep in range(drl_cfg.episodes):
        if (
            drl_cfg.restart_period
            and 0 < ep < restart_until
            and ep % drl_cfg.restart_period == 0
        ):
            state = initial_state(cfg)
            h = 0.0
        ep_reward = 0.0
        ep_tx = 0
        ep_cost = 0.0
        losses: List[float] = []
        for _ in range(drl_cfg.steps_per_episode):
            obs = encode_observation(state, h, cfg, drl_cfg)
            eps = epsilon_at(global_step, drl_cfg)
            if streams.exploration.uniform() < eps:
                a_idx = int(streams.exploration.uniform() * num_actions) % num_actions
            else:
                a_idx = int(np.argmax(online.forward(obs[None])[0]))
            action = actions[a_idx]
            outcome = step(state, action, cfg, streams)
            h_next = queue_update(h, action, cfg.budget)
            dest_ages = [src.dest_age for src in outcome.next_state]
            r = reward(h, h_next, dest_ages, cfg.weights, drl_cfg.tradeoff_v)
            obs_next = encode_observation(outcome.next_state, h_next, cfg, drl_cfg)
            trainer.buffer.push(obs, a_idx, r, obs_next)
            if (
                trainer.buffer.size >= max(drl_cfg.min_fill, drl_cfg.batch_size)
                and global_step % drl_cfg.train_every == 0
            ):
                losses.append(trainer.train_step(learner_rng))
            ep_reward += r
            ep_tx += tx_cost(action)
            ep_cost += aoi_cost(outcome.next_state, cfg)
            state = outcome.next_state
            h = h_next
            global_step += 1
        log = EpisodeLog(
            episode=ep,
            episodic_reward=ep_reward,
            mean_tx_per_slot=ep_tx / drl_cfg.steps_per_episode,
            ws_aaoi=ep_cost / drl_cfg.steps_per_episode,
            mean_loss=float(np.mean(losses)) if losses else float("nan"),
            epsilon=epsilon_at(global_step, drl_cfg),
        )
        logs.append(log)
        if log_hook is not None:
            log_hook(log)
    return online, logs


def write_training_log(path: str, logs: Sequence[EpisodeLog]) -> None:
    with open(path, "w") as fh:
        fh.write("episode,episodic_reward,mean_tx_per_slot,ws_aaoi\n")
        for log in logs:
            fh.write(
                f"{log.episode},{log.episodic_reward:.17g},"
                f"{log.mean_tx_per_slot:.17g},{log.ws_aaoi:.17g}\n"
            )


def save_checkpoint(path: str, net: QNetwork, cfg_digest: str, drl_cfg: DrlConfig) -> None:
    """JSON header line with shapes and provenance, then raw float64 bytes."""
    keys = sorted(net.params)
    header = {
        "config_digest": cfg_digest,
        "input_dim": net.input_dim,
        "hidden_sizes": list(net.hidden_sizes),
        "num_actions": net.num_actions,
        "state_scale": drl_cfg.state_scale,
        "tradeoff_v": drl_cfg.tradeoff_v,
        "tensors": [[k, list(net.params[k].shape)] for k in keys],
        "dtype": "float64",
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for k in keys:
            fh.write(np.ascontiguousarray(net.params[k], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Tuple[QNetwork, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    net = QNetwork.__new__(QNetwork)
    net.input_dim = header["input_dim"]
    net.hidden_sizes = tuple(header["hidden_sizes"])
    net.num_actions = header["num_actions"]
    net.params = {}
    pos = 0
    for key, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        net.params[key] = arr.copy()
        pos += size * 8
    return net, header
