"""Shared fixtures and the outcome-enumeration oracle.

The oracle rebuilds one kernel row by enumerating every arrival/channel
outcome combination and pushing it through the capped one-slot dynamics;
it never touches the closed branch table, so kernel tests compare two
independent derivations.
"""

import itertools
from typing import Dict

import pytest

from relay_aoi.core import Action, SystemConfig, SystemState, advance_source
from relay_aoi.kernel import StateIndexer


def outcome_enumeration_row(
    s: SystemState, a: Action, cfg: SystemConfig, indexer: StateIndexer
) -> Dict[int, float]:
    """Exact successor distribution of (s, a) from first principles."""
    probs: Dict[int, float] = {}
    rho1_support = [0, 1] if a.alpha != 0 else [0]
    rho2_support = [0, 1] if a.beta != 0 else [0]
    for us in itertools.product([0, 1], repeat=cfg.num_sources):
        pu = 1.0
        for u, mu in zip(us, cfg.arrival_rates):
            pu *= mu if u else (1.0 - mu)
        if pu == 0.0:
            continue
        for r1 in rho1_support:
            p1f = 1.0 if a.alpha == 0 else (cfg.p1 if r1 else 1.0 - cfg.p1)
            for r2 in rho2_support:
                p2f = 1.0 if a.beta == 0 else (cfg.p2 if r2 else 1.0 - cfg.p2)
                prob = pu * p1f * p2f
                if prob == 0.0:
                    continue
                nxt = tuple(
                    advance_source(
                        src,
                        a.alpha == i + 1,
                        a.beta == i + 1,
                        bool(us[i]),
                        bool(r1),
                        bool(r2),
                        cfg.aoi_bound,
                    )
                    for i, src in enumerate(s)
                )
                key = indexer.encode(nxt)
                probs[key] = probs.get(key, 0.0) + prob
    return probs


@pytest.fixture
def tiny_cfg():
    """One source, bound 3: 20 states."""
    return SystemConfig(1, (0.5,), (1.0,), 0.7, 0.8, 1.0, aoi_bound=3)


@pytest.fixture
def small_cfg():
    """Two sources, bound 3: 400 states."""
    return SystemConfig(2, (0.5, 0.6), (1.0, 1.0), 0.7, 0.8, 1.0, aoi_bound=3)
