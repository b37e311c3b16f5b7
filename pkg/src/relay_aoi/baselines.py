"""Comparison anchors: a budget-gated greedy scheduler and a uniform
random policy."""

from __future__ import annotations

from dataclasses import dataclass

from relay_aoi.core import Action, SystemState, tx_cost
from relay_aoi.rng import UniformStream


@dataclass
class BaselineState:
    """Running average of transmissions used by the greedy gate."""

    cumulative_tx: int = 0
    elapsed: int = 0

    @property
    def avg_tx(self) -> float:
        return self.cumulative_tx / self.elapsed if self.elapsed else 0.0


def greedy_decide(state: SystemState, baseline: BaselineState, budget: float) -> Action:
    """Transmit the largest-gap source on each link while under budget.

    Gate: both links idle whenever the running transmission average
    exceeds the budget.  A link with all gaps zero idles too; resending
    content the next hop already holds cannot reduce any age.  The running
    average is charged with the returned action before returning.
    """
    if baseline.avg_tx <= budget:
        best_alpha, best_x = 0, 0
        best_beta, best_y = 0, 0
        for i, src in enumerate(state):
            if src.x > best_x:
                best_alpha, best_x = i + 1, src.x
            if src.y > best_y:
                best_beta, best_y = i + 1, src.y
        action = Action(best_alpha, best_beta)
    else:
        action = Action(0, 0)
    baseline.cumulative_tx += tx_cost(action)
    baseline.elapsed += 1
    return action


def random_decide(stream: UniformStream, num_sources: int) -> Action:
    """Both links uniform on {idle, source 1, ..., source I}, independently."""
    alpha = int(stream.uniform() * (num_sources + 1))
    beta = int(stream.uniform() * (num_sources + 1))
    return Action(min(alpha, num_sources), min(beta, num_sources))
