"""Flat `key = value` configuration files.

Dotted keys, `#` comments, blank lines ignored.  Parse errors and type
errors always name the offending key so batch runs fail loudly.
"""

from __future__ import annotations

import re
from typing import Dict, List, Optional, Sequence

from relay_aoi.core import SystemConfig
from relay_aoi.dpp import DppConfig
from relay_aoi.drl import DrlConfig
from relay_aoi.solver import SolverConfig


class ConfigError(ValueError):
    pass


_KEY_PATTERNS = [
    r"system\.(num_sources|aoi_bound|p1|p2|budget)",
    r"source\.(mu|weight)",
    r"source\.\d+\.(mu|weight)",
    r"solver\.(zeta|epsilon|lambda_lo|lambda_hi|s_ref|max_sweeps|use_structure)",
    r"dpp\.tradeoff_v",
    r"drl\.(tradeoff_v|discount|hidden_sizes|learning_rate|batch_size|replay_capacity|"
    r"target_sync|eps_start|eps_end|eps_decay_steps|steps_per_episode|episodes|"
    r"state_scale|grad_clip|rmsprop_decay|rmsprop_eps|min_fill|train_every)",
    r"simulate\.(policy|horizon|log_every|policy_file|checkpoint|bound)",
    r"experiment\.(name|sweep|grid|horizon|replications|policies|emit_series|tradeoff_v)",
    r"structure\.(lam|beta_context|alpha_context)",
    r"complexity\.(n_grid|num_sources|timed_sweeps|warmup_sweeps)",
    r"validate\.(trials|pairs)",
]
_KEY_RE = re.compile("^(" + "|".join(_KEY_PATTERNS) + ")$")


def parse_config(path: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not _KEY_RE.match(key):
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def _get(values: Dict[str, str], key: str, default=None, required: bool = False) -> Optional[str]:
    if key in values:
        return values[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def get_float(values: Dict[str, str], key: str, default: Optional[float] = None) -> Optional[float]:
    raw = _get(values, key, None, required=default is None)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: not a number: {raw!r}") from exc


def get_int(values: Dict[str, str], key: str, default: Optional[int] = None) -> Optional[int]:
    raw = _get(values, key, None, required=default is None)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: not an integer: {raw!r}") from exc


def get_bool(values: Dict[str, str], key: str, default: bool) -> bool:
    raw = _get(values, key, None)
    if raw is None:
        return default
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"key {key!r}: not a boolean: {raw!r}")


def get_str(
    values: Dict[str, str], key: str, default: Optional[str] = None, required: bool = False
) -> Optional[str]:
    return _get(values, key, default, required=required)


def get_float_list(values: Dict[str, str], key: str, default: Sequence[float]) -> List[float]:
    raw = _get(values, key, None)
    if raw is None:
        return list(default)
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: not a comma-separated number list: {raw!r}") from exc


def system_config_from(values: Dict[str, str]) -> SystemConfig:
    num_sources = get_int(values, "system.num_sources", 2)
    bound_raw = _get(values, "system.aoi_bound", "10")
    if bound_raw.lower() in ("unbounded", "none"):
        bound = None
    else:
        try:
            bound = int(bound_raw)
        except ValueError as exc:
            raise ConfigError(
                f"key 'system.aoi_bound': expected integer or 'unbounded', got {bound_raw!r}"
            ) from exc
    mu_common = get_float(values, "source.mu", 0.5)
    w_common = get_float(values, "source.weight", 1.0)
    mus = [get_float(values, f"source.{i + 1}.mu", mu_common) for i in range(num_sources)]
    ws = [get_float(values, f"source.{i + 1}.weight", w_common) for i in range(num_sources)]
    try:
        return SystemConfig(
            num_sources=num_sources,
            arrival_rates=tuple(mus),
            weights=tuple(ws),
            p1=get_float(values, "system.p1", 0.7),
            p2=get_float(values, "system.p2", 0.8),
            budget=get_float(values, "system.budget", 1.0),
            aoi_bound=bound,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def solver_config_from(values: Dict[str, str]) -> SolverConfig:
    return SolverConfig(
        zeta=get_float(values, "solver.zeta", 0.1),
        epsilon=get_float(values, "solver.epsilon", 1e-3),
        lambda_lo=get_float(values, "solver.lambda_lo", 0.0),
        lambda_hi=get_float(values, "solver.lambda_hi", 1.0),
        s_ref=get_int(values, "solver.s_ref", 0),
        max_sweeps=get_int(values, "solver.max_sweeps", 200_000),
        use_structure=get_bool(values, "solver.use_structure", True),
    )


def dpp_config_from(values: Dict[str, str]) -> DppConfig:
    return DppConfig(tradeoff_v=get_float(values, "dpp.tradeoff_v", 100.0))


def drl_config_from(values: Dict[str, str]) -> DrlConfig:
    hidden = get_float_list(values, "drl.hidden_sizes", (512, 256))
    decay = get_int(values, "drl.eps_decay_steps", -1)
    return DrlConfig(
        tradeoff_v=get_float(values, "drl.tradeoff_v", 100.0),
        discount=get_float(values, "drl.discount", 0.99),
        hidden_sizes=tuple(int(hs) for hs in hidden),
        learning_rate=get_float(values, "drl.learning_rate", 1e-4),
        batch_size=get_int(values, "drl.batch_size", 64),
        replay_capacity=get_int(values, "drl.replay_capacity", 100_000),
        target_sync=get_int(values, "drl.target_sync", 1_000),
        eps_start=get_float(values, "drl.eps_start", 1.0),
        eps_end=get_float(values, "drl.eps_end", 0.05),
        eps_decay_steps=None if decay < 0 else decay,
        steps_per_episode=get_int(values, "drl.steps_per_episode", 600),
        episodes=get_int(values, "drl.episodes", 300),
        state_scale=get_float(values, "drl.state_scale", 50.0),
        grad_clip=get_float(values, "drl.grad_clip", 10.0),
        rmsprop_decay=get_float(values, "drl.rmsprop_decay", 0.9),
        rmsprop_eps=get_float(values, "drl.rmsprop_eps", 1e-8),
        min_fill=get_int(values, "drl.min_fill", 1_000),
        train_every=get_int(values, "drl.train_every", 1),
    )
