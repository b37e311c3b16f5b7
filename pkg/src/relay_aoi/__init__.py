"""Scheduling a multi-source two-hop status-update system under a
transmission budget.

Subpackages cover the environment model (`core`), the exact transition
kernel over the bounded age simplex (`kernel`), the Lagrangian CMDP solver
(`solver`), the drift-plus-penalty scheduler (`dpp`), reference policies
(`baselines`), the dueling double Q-learning policy (`drl`), and the
simulation/experiment harness (`harness`, `experiments`, `cli`).
"""

from relay_aoi.core import Action, SourceState, SystemConfig

__all__ = ["Action", "SourceState", "SystemConfig"]
