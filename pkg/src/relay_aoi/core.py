"""Environment model of the multi-source two-hop status-update system.

Independent sources deposit fresh packets at a transmitter (Bernoulli
arrivals), the transmitter relays one packet per slot to a buffer-aided
relay, and the relay forwards one packet per slot to the destination; both
links fail independently.  Per-source freshness is the triple

    theta : age of the newest packet at the transmitter,
    x     : relay age minus transmitter age (staleness gap on hop 1),
    y     : destination age minus relay age (staleness gap on hop 2),

so the destination age is theta + x + y.  In bounded mode every age is
capped at ``aoi_bound`` and the triple lives on the simplex
theta + x + y <= N; in unbounded mode the raw recursions apply.

The relay forwards the packet held in its buffer at the start of the slot;
a packet received from the transmitter in the same slot only becomes
forwardable the next slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

from relay_aoi.rng import SimStreams


class SourceState(NamedTuple):
    theta: int
    x: int
    y: int

    @property
    def relay_age(self) -> int:
        return self.theta + self.x

    @property
    def dest_age(self) -> int:
        return self.theta + self.x + self.y


SystemState = Tuple[SourceState, ...]


class Action(NamedTuple):
    """Transmitter / relay decisions; source labels are 1-based, 0 = idle."""

    alpha: int
    beta: int


class StepOutcome(NamedTuple):
    arrivals: Tuple[bool, ...]
    relay_success: bool
    dest_success: bool
    next_state: SystemState
    tx_cost: int


@dataclass(frozen=True)
class SystemConfig:
    """All environment parameters.

    ``aoi_bound`` is an integer N >= 2 for the bounded (finite-state) mode
    or None for unbounded dynamics.  ``budget`` is the allowed long-run
    average number of transmissions per slot across both links.
    """

    num_sources: int
    arrival_rates: Tuple[float, ...]
    weights: Tuple[float, ...]
    p1: float
    p2: float
    budget: float
    aoi_bound: Optional[int] = None

    def __post_init__(self):
        if self.num_sources < 1:
            raise ValueError("num_sources must be >= 1")
        object.__setattr__(self, "arrival_rates", tuple(float(m) for m in self.arrival_rates))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.arrival_rates) != self.num_sources:
            raise ValueError("need one arrival rate per source")
        if len(self.weights) != self.num_sources:
            raise ValueError("need one weight per source")
        for mu in self.arrival_rates:
            if not 0.0 < mu <= 1.0:
                raise ValueError(f"arrival rate {mu} outside (0, 1]")
        for w in self.weights:
            if w <= 0.0:
                raise ValueError(f"weight {w} must be positive")
        for p in (self.p1, self.p2):
            if not 0.0 < p <= 1.0:
                raise ValueError(f"link success probability {p} outside (0, 1]")
        if not 0.0 < self.budget <= 2.0:
            raise ValueError(f"budget {self.budget} outside (0, 2]")
        if self.aoi_bound is not None and self.aoi_bound < 2:
            raise ValueError("aoi_bound must be >= 2 when finite")

    @property
    def bounded(self) -> bool:
        return self.aoi_bound is not None

    def with_bound(self, bound: Optional[int]) -> "SystemConfig":
        return SystemConfig(
            num_sources=self.num_sources,
            arrival_rates=self.arrival_rates,
            weights=self.weights,
            p1=self.p1,
            p2=self.p2,
            budget=self.budget,
            aoi_bound=bound,
        )

    def validate_action(self, a: Action) -> None:
        if not (0 <= a.alpha <= self.num_sources and 0 <= a.beta <= self.num_sources):
            raise ValueError(f"action {a} outside {{0..{self.num_sources}}}^2")


def initial_state(cfg: SystemConfig) -> SystemState:
    return tuple(SourceState(0, 0, 0) for _ in range(cfg.num_sources))


def tilde_triplet(src: SourceState, bound: int) -> Tuple[int, int, int]:
    """One-slot aged triple under the cap, before any delivery is applied.

    theta~ = min(theta+1, N); the x~/y~ pieces are the increments of the
    capped relay/destination ages so that theta~ + x~ + y~ <= N.
    """
    th, x, y = src
    t1 = min(th + 1, bound)
    t2 = min(x + th + 1, bound)
    t3 = min(y + x + th + 1, bound)
    return t1, t2 - t1, t3 - t2


def advance_source(
    src: SourceState,
    alpha_hit: bool,
    beta_hit: bool,
    arrived: bool,
    relay_ok: bool,
    dest_ok: bool,
    bound: Optional[int],
) -> SourceState:
    """One-slot deterministic update of a single source given all outcomes.

    ``alpha_hit`` / ``beta_hit`` say whether this source was scheduled on
    the corresponding link; ``relay_ok`` / ``dest_ok`` are only meaningful
    when the link was used.  The destination update reads the relay buffer
    as of the start of the slot.
    """
    th, x, y = src
    if bound is None:
        got_hop1 = alpha_hit and relay_ok
        got_hop2 = beta_hit and dest_ok
        th2 = 0 if arrived else th + 1
        x2 = (0 if got_hop1 else x) + ((th + 1) if arrived else 0)
        y2 = (0 if got_hop2 else y) + (x if got_hop1 else 0)
        return SourceState(th2, x2, y2)
    psi = th + x
    delta = psi + y
    th2 = 0 if arrived else min(th + 1, bound)
    psi2 = min(th + 1, bound) if (alpha_hit and relay_ok) else min(psi + 1, bound)
    delta2 = min(psi + 1, bound) if (beta_hit and dest_ok) else min(delta + 1, bound)
    return SourceState(th2, psi2 - th2, delta2 - psi2)


def step(s: SystemState, a: Action, cfg: SystemConfig, streams: SimStreams) -> StepOutcome:
    """Stochastic one-slot transition.

    Arrival draws are consumed for every source each slot; channel draws
    are consumed only when the corresponding link transmits, so idle links
    leave the channel streams untouched.
    """
    arrivals = tuple(streams.arrivals.bernoulli(mu) for mu in cfg.arrival_rates)
    relay_ok = streams.channel1.bernoulli(cfg.p1) if a.alpha != 0 else False
    dest_ok = streams.channel2.bernoulli(cfg.p2) if a.beta != 0 else False
    nxt = tuple(
        advance_source(
            src,
            a.alpha == i + 1,
            a.beta == i + 1,
            arrivals[i],
            relay_ok,
            dest_ok,
            cfg.aoi_bound,
        )
        for i, src in enumerate(s)
    )
    return StepOutcome(arrivals, relay_ok, dest_ok, nxt, tx_cost(a))


def aoi_cost(s: SystemState, cfg: SystemConfig) -> float:
    """Weighted sum of destination ages."""
    return sum(w * (src.theta + src.x + src.y) for w, src in zip(cfg.weights, s))


def tx_cost(a: Action) -> int:
    """Number of links transmitting this slot (0, 1 or 2)."""
    return (1 if a.alpha != 0 else 0) + (1 if a.beta != 0 else 0)


def clamp_to_bound(s: SystemState, bound: int) -> SystemState:
    """Map any nonnegative state onto the bounded simplex.

    Truncates the oldest information first: y, then x, then theta.  Lets
    table policies solved on a bounded model act inside unbounded runs.
    """
    out = []
    for src in s:
        th, x, y = src
        if th + x + y <= bound:
            out.append(src)
            continue
        th = min(th, bound)
        x = min(x, bound - th)
        y = min(y, bound - th - x)
        out.append(SourceState(th, x, y))
    return tuple(out)


def state_from_flat(values: Sequence[int]) -> SystemState:
    """Build a state from a flat (theta1, x1, y1, theta2, ...) sequence."""
    if len(values) % 3 != 0:
        raise ValueError("flat state length must be a multiple of 3")
    return tuple(
        SourceState(int(values[3 * i]), int(values[3 * i + 1]), int(values[3 * i + 2]))
        for i in range(len(values) // 3)
    )
