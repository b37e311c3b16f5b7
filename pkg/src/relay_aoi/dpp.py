"""Drift-plus-penalty scheduler.

A virtual queue H tracks the cumulative overshoot of the transmission
budget; each slot the scheduler greedily minimizes a bound on the queue's
quadratic Lyapunov drift plus V times the weighted age penalty, which
separates into two closed-form comparisons: transmit on a link only when
the best achievable score V * p * w_i * gap_i reaches the current backlog.
"""

from __future__ import annotations

from dataclasses import dataclass

from relay_aoi.core import Action, SystemConfig, SystemState, tx_cost


@dataclass(frozen=True)
class DppConfig:
    """Tradeoff weight between queue stability and age penalty."""

    tradeoff_v: float = 100.0

    def __post_init__(self):
        if self.tradeoff_v < 0:
            raise ValueError("tradeoff weight must be nonnegative")


def queue_update(h: float, a: Action, budget: float) -> float:
    """Backlog recursion: service budget per slot, arrivals = transmissions."""
    return max(h - budget + tx_cost(a), 0.0)


def decide(state: SystemState, h: float, cfg: SystemConfig, dpp_cfg: DppConfig) -> Action:
    """Closed-form per-slot rule.

    Each link independently transmits the source with the largest
    V * p * w * gap whenever that score reaches H (ties to the lowest
    source index); a winning score of exactly zero means the freshest
    content is already downstream, so the link idles.
    """
    v = dpp_cfg.tradeoff_v
    best_alpha, alpha_score = 0, 0.0
    best_beta, beta_score = 0, 0.0
    for i, src in enumerate(state):
        w = cfg.weights[i]
        s1 = v * cfg.p1 * w * src.x
        if s1 > alpha_score:
            best_alpha, alpha_score = i + 1, s1
        s2 = v * cfg.p2 * w * src.y
        if s2 > beta_score:
            best_beta, beta_score = i + 1, s2
    alpha = best_alpha if (alpha_score >= h and alpha_score > 0.0) else 0
    beta = best_beta if (beta_score >= h and beta_score > 0.0) else 0
    return Action(alpha, beta)


def stability_bound(cfg: SystemConfig, dpp_cfg: DppConfig, n_for_bound: int) -> float:
    """Guaranteed cap on the long-run mean backlog when ages stay <= N.

    (B + V*(5N+4)*sum(w)) / budget with B = budget^2/2 + 2.
    """
    b = 0.5 * cfg.budget**2 + 2.0
    v_tilde = dpp_cfg.tradeoff_v * (5 * n_for_bound + 4) * sum(cfg.weights)
    return (b + v_tilde) / cfg.budget
