"""Event-driven PSP simulation.

Two event kinds drive the market: ``BUYER_COMPUTE`` (a buyer recomputes its
bid vector) and ``POST_BID`` (a seller clears its book).  Events are popped
in ``(time, seq)`` order, so a run is a deterministic function of the initial
market, the configuration and the seed.  A third kind, ``INJECT``, carries a
scripted bid change for exogenous perturbations.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional, Sequence

from .influence import ShiftEvent, seller_shifts
from .market_core import (QTY_EPS, RESERVE_RULES, Bid, ConfigurationError, allocate,
                          exclusion_cost, opponent_staircase, progressive_steps,
                          update_reserve)
from .rng import SplitMix64
from .state import MarketState
from .strategy import (BuyerSnapshot, accept_update, evaluate_bids,
                       joint_best_response)

BUYER_COMPUTE = "BUYER_COMPUTE"
POST_BID = "POST_BID"
INJECT = "INJECT"

#: bid or award changes at or below this are not "effective"
CHANGE_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    target: Hashable = field(compare=False, default=None)
    payload: object = field(compare=False, default=None, repr=False)


@dataclass
class EngineConfig:
    max_steps: int = 10_000
    epsilon: float = 2.5
    convergence_window: int = 200
    reserve_rule: str = "reactive"
    rng_seed: int = 0
    buyer_mode: str = "best_response"  # or "static": bids only change by injection
    per_seller_price: bool = False
    epsilon_improve: Optional[float] = None
    record_snapshots: bool = False

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ConfigurationError("max_steps must be > 0")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if self.reserve_rule not in RESERVE_RULES:
            raise ConfigurationError(f"reserve_rule must be one of {RESERVE_RULES}")
        if self.buyer_mode not in ("best_response", "static"):
            raise ConfigurationError("buyer_mode must be 'best_response' or 'static'")


@dataclass
class TauTrace:
    steps: list = field(default_factory=list)

    def for_seller(self, j) -> list:
        return [s for s in self.steps if s.seller_id == j]

    def reserves_monotone(self) -> bool:
        last: dict = {}
        for s in self.steps:
            if s.reserve_after < last.get(s.seller_id, -math.inf):
                return False
            last[s.seller_id] = s.reserve_after
        return True


@dataclass
class RunResult:
    market: MarketState
    trace: TauTrace
    shifts: list
    converged: bool
    steps: int
    flags: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    computes: dict = field(default_factory=dict)


def has_converged(flags: Sequence[bool], config: EngineConfig, queue_empty: bool = False) -> bool:
    if queue_empty:
        return True
    w = config.convergence_window
    return w > 0 and len(flags) >= w and not any(flags[-w:])


def _changed(a: float, b: float) -> bool:
    return abs(a - b) > CHANGE_TOL


class Simulation:
    """One run of the event loop over a market it owns exclusively."""

    def __init__(self, market: MarketState, config: EngineConfig):
        self.market = market
        self.config = config
        market.epsilon = config.epsilon
        self.queue: list = []
        self.pending: set = set()
        self.seq = 0
        self.trace = TauTrace()
        self.shifts: list = []
        self.clears: dict = {j: 0 for j in market.sellers}
        self.last_cleared: dict = {j: {} for j in market.sellers}
        self.computes: dict = {i: 0 for i in market.buyers}
        self.snapshots: list = []

    # -- scheduling
    def schedule(self, time: float, kind: str, target=None, payload=None):
        key = (kind, target)
        if kind != INJECT and key in self.pending:
            return None
        ev = Event(time, self.seq, kind, target, payload)
        self.seq += 1
        if kind != INJECT:
            self.pending.add(key)
        heapq.heappush(self.queue, ev)
        return ev

    def schedule_all_buyers(self, t0: float = 0.0):
        order = SplitMix64(self.config.rng_seed).shuffle(self.market.buyer_ids())
        for i in order:
            self.schedule(t0, BUYER_COMPUTE, i)

    def schedule_all_sellers(self, t0: float = 0.0):
        order = SplitMix64(self.config.rng_seed).shuffle(self.market.seller_ids())
        for j in order:
            self.schedule(t0, POST_BID, j)

    def inject(self, time: float, change: Callable):
        """Schedule ``change(market) -> [(buyer, seller, quantity, price), ...]``."""
        self.schedule(time, INJECT, None, change)

    # -- event handlers
    def process_buyer_compute(self, i) -> tuple:
        m, cfg = self.market, self.config
        self.computes[i] = self.computes.get(i, 0) + 1
        if cfg.buyer_mode == "static":
            return [], False
        profile = m.buyers[i]
        linked = m.sellers_linked_to(i)
        if not linked:
            return [], False
        books = tuple(m.book(j) for j in linked)
        br = joint_best_response(profile, BuyerSnapshot(books, cfg.epsilon, cfg.per_seller_price))
        current = {j: m.bid(i, j) for j in linked}
        proposed = {}
        for j in linked:
            b = br.entries.get(j)
            proposed[j] = b if b is not None else Bid(i, 0.0, 0.0)
        touched = [j for j in linked
                   if _changed(proposed[j].quantity, current[j].quantity)
                   or (proposed[j].active and _changed(proposed[j].unit_price, current[j].unit_price))]
        if not touched:
            return [], False
        u_old, _, _ = evaluate_bids(profile, books, current)
        u_new, _, _ = evaluate_bids(profile, books, proposed)
        eps = profile.epsilon_improve or cfg.epsilon_improve or cfg.epsilon
        if not accept_update(u_new, u_old, eps):
            return [], False
        for j in touched:
            m.set_bid(i, j, proposed[j].quantity, proposed[j].unit_price)
        return [(POST_BID, j) for j in touched], True

    def process_post_bid(self, j) -> tuple:
        m, cfg = self.market, self.config
        book = m.book(j)
        result = allocate(book)
        reserve = update_reserve(book, result, cfg.reserve_rule)
        self.clears[j] += 1
        steps = progressive_steps(book, result, reserve, self.clears[j])
        self.trace.steps.extend(steps)

        bids_now = {b.buyer_id: b for b in book.bids}
        events = seller_shifts(self.last_cleared[j], bids_now, book.capacity, j,
                               m.clock, result.winners)
        self.shifts.extend(events)
        # a changed book moves every linked buyer's opposing staircase
        book_changed = bids_now != self.last_cleared[j]
        self.last_cleared[j] = bids_now

        follow = []
        effective = False
        s = m.sellers[j]
        for (i, jj) in sorted(m.links, key=lambda k: repr(k)):
            if jj != j:
                continue
            a = result.awards.get(i, 0.0)
            if a > m.bid(i, j).quantity + QTY_EPS:
                raise SimulationError(f"award {a} exceeds request at ({i!r}, {j!r})")
            pay = exclusion_cost(opponent_staircase([book], i), a) if a > 0 else 0.0
            if not (math.isfinite(a) and math.isfinite(pay)):
                raise SimulationError(f"non-finite award/payment at ({i!r}, {j!r})")
            if _changed(a, m.award(i, j)):
                follow.append((BUYER_COMPUTE, i))
                effective = True
            elif book_changed:
                follow.append((BUYER_COMPUTE, i))
            m.awards[(i, j)] = a
            m.payments[(i, j)] = pay
        if _changed(reserve, s.reserve) or _changed(result.clearing_price, s.clearing_price):
            effective = True
        if not math.isfinite(reserve):
            raise SimulationError(f"non-finite reserve at seller {j!r}")
        s.reserve = reserve
        s.clearing_price = result.clearing_price
        s.revenue = sum(m.payments.get((i, jj), 0.0) for (i, jj) in m.links if jj == j)
        return follow, effective

    def process_inject(self, change: Callable) -> tuple:
        m = self.market
        touched = []
        for i, j, q, p in change(m):
            old = m.bid(i, j)
            m.set_bid(i, j, q, p)
            if _changed(old.quantity, q) or _changed(old.unit_price, p):
                touched.append(j)
        touched = sorted(set(touched), key=repr)
        return [(POST_BID, j) for j in touched], bool(touched)

    # -- main loop
    def step(self) -> bool:
        ev = heapq.heappop(self.queue)
        self.pending.discard((ev.kind, ev.target))
        self.market.clock = ev.time
        if ev.kind == BUYER_COMPUTE:
            follow, changed = self.process_buyer_compute(ev.target)
        elif ev.kind == POST_BID:
            follow, changed = self.process_post_bid(ev.target)
            if self.config.record_snapshots:
                self.snapshots.append(self.market.copy())
        else:
            follow, changed = self.process_inject(ev.payload)
        for kind, target in follow:
            self.schedule(ev.time + 1, kind, target)
        return changed

    def run(self) -> RunResult:
        flags: list = []
        converged = False
        while True:
            if has_converged(flags, self.config, queue_empty=not self.queue):
                converged = True
                break
            if len(flags) >= self.config.max_steps:
                break
            flags.append(self.step())
        return RunResult(self.market, self.trace, self.shifts, converged, len(flags),
                         flags, self.snapshots, self.computes)


def run(market: MarketState, config: EngineConfig, schedule: str = "auto",
        injections: Sequence = ()) -> RunResult:
    """Run the event loop to convergence or the step limit.

    ``schedule`` picks the initial events: ``"buyers"`` queues a compute for
    every buyer, ``"sellers"`` a clear for every seller and ``"auto"`` uses
    buyers in best-response mode and sellers in static mode.  ``injections``
    are ``(time, change)`` pairs, see :meth:`Simulation.inject`.
    """
    sim = Simulation(market, config)
    if schedule == "auto":
        schedule = "buyers" if config.buyer_mode == "best_response" else "sellers"
    if schedule == "buyers":
        sim.schedule_all_buyers()
    elif schedule == "sellers":
        sim.schedule_all_sellers()
    elif schedule != "none":
        raise ConfigurationError(f"unknown schedule {schedule!r}")
    for t, change in injections:
        sim.inject(t, change)
    return sim.run()
