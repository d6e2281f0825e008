"""Influence sets, price ladders, market shifts and saturation checks.

Vertices are tagged with their side so buyer and seller ids may overlap
(``Vertex("buyer", 0)`` and ``Vertex("seller", 0)`` are distinct).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Optional, Sequence

from .market_core import QTY_EPS, Bid, _id_key, allocate
from .state import MarketState
from .strategy import evaluate_bids

BUYER = "buyer"
SELLER = "seller"

DEMAND_SHORTFALL = "DemandShortfall"
BID_OVERTAKE = "BidOvertake"


class Vertex(NamedTuple):
    side: str
    id: Hashable


def buyer(i) -> Vertex:
    return Vertex(BUYER, i)


def seller(j) -> Vertex:
    return Vertex(SELLER, j)


@dataclass(frozen=True)
class ActiveIndex:
    """Set of (buyer, seller) pairs carrying a positive bid quantity."""

    pairs: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset(self.pairs))

    @classmethod
    def from_market(cls, market: MarketState) -> "ActiveIndex":
        return cls(market.active_pairs())


def sellers_of_buyer(index: ActiveIndex, i) -> set:
    return {j for (ii, j) in index.pairs if ii == i}


def buyers_of_seller(index: ActiveIndex, j) -> set:
    return {i for (i, jj) in index.pairs if jj == j}


@dataclass(frozen=True)
class InfluenceShell:
    center: Vertex
    depth: int
    members: frozenset

    @property
    def ids(self) -> set:
        return {v.id for v in self.members}


def _primary(index: ActiveIndex, x: Vertex) -> set:
    if x.side == SELLER:
        out = {seller(j) for i in buyers_of_seller(index, x.id) for j in sellers_of_buyer(index, i)}
    else:
        out = {buyer(i) for j in sellers_of_buyer(index, x.id) for i in buyers_of_seller(index, j)}
    return out or {x}


def lambda_primary(index: ActiveIndex, x: Vertex) -> InfluenceShell:
    return InfluenceShell(x, 1, frozenset(_primary(index, x)))


def lambda_n(index: ActiveIndex, x: Vertex, n: int) -> InfluenceShell:
    if n < 0:
        raise ValueError("hop count must be >= 0")
    layer = {x}
    for _ in range(n):
        layer = set().union(*(_primary(index, y) for y in layer))
    return InfluenceShell(x, n, frozenset(layer))


def component_closure(index: ActiveIndex, x: Vertex) -> InfluenceShell:
    n, layer = 0, {x}
    while True:
        nxt = set().union(*(_primary(index, y) for y in layer))
        if nxt == layer:
            return InfluenceShell(x, n, frozenset(layer))
        layer, n = nxt, n + 1


# ---------------------------------------------------------------- price ladder

@dataclass(frozen=True)
class LadderTuple:
    seller_l: Hashable
    bridge_buyer_k: Hashable
    seller_j: Hashable
    buyer_i: Hashable
    prices: tuple  # (p*_l, p_k, p*_j, p_i)

    @property
    def margins(self) -> tuple:
        pl, pk, pj, pi = self.prices
        return (pk - pl, pj - pk, pi - pj)

    @property
    def ok(self) -> bool:
        pl, pk, pj, pi = self.prices
        return pl <= pk < pj <= pi

    @property
    def key(self) -> tuple:
        return (self.seller_l, self.bridge_buyer_k, self.seller_j, self.buyer_i)


@dataclass(frozen=True)
class LadderReport:
    tuples: tuple

    @property
    def violations(self) -> list:
        return [t for t in self.tuples if not t.ok]

    @property
    def seller_pairs(self) -> set:
        return {frozenset((t.seller_j, t.seller_l)) for t in self.tuples}

    @property
    def min_margins(self) -> Optional[tuple]:
        if not self.tuples:
            return None
        return tuple(min(t.margins[r] for t in self.tuples) for r in range(3))

    def to_dict(self) -> dict:
        return {
            "n_tuples": len(self.tuples),
            "n_valid": len(self.tuples) - len(self.violations),
            "n_violations": len(self.violations),
            "unique_seller_pairs": len(self.seller_pairs),
            "min_margins": list(self.min_margins) if self.min_margins else None,
            "tuples": [{"l": t.seller_l, "k": t.bridge_buyer_k, "j": t.seller_j, "i": t.buyer_i,
                        "prices": list(t.prices), "margins": list(t.margins), "ok": t.ok}
                       for t in self.tuples],
        }


def ladder_tuples(market: MarketState, sellers: Optional[set] = None) -> LadderReport:
    """Enumerate ``(l, k, j, i)``: buyer i bids on j and on a neighbour l where
    buyer k bids but not on j.  The tuple holds when
    ``p*_l <= p_k < p*_j <= p_i`` (outer bounds weak, middle strict).
    """
    index = ActiveIndex.from_market(market)
    out = []
    for j in market.seller_ids():
        if sellers is not None and j not in sellers:
            continue
        bj = buyers_of_seller(index, j)
        for i in sorted(bj, key=_id_key):
            for l in sorted(sellers_of_buyer(index, i) - {j}, key=_id_key):
                if sellers is not None and l not in sellers:
                    continue
                for k in sorted(buyers_of_seller(index, l) - bj, key=_id_key):
                    prices = (market.sellers[l].clearing_price, market.bid(k, l).unit_price,
                              market.sellers[j].clearing_price, market.bid(i, j).unit_price)
                    out.append(LadderTuple(l, k, j, i, prices))
    return LadderReport(tuple(out))


# ---------------------------------------------------------------- market shifts

@dataclass(frozen=True)
class ShiftEvent:
    kind: str
    seller: Hashable
    buyer: Hashable
    round: object = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seller": self.seller, "buyer": self.buyer,
                "round": self.round, "detail": self.detail}


def seller_shifts(before_bids: dict, after_bids: dict, capacity: float, seller_id,
                  round=None, winners=()) -> list:
    """Shift events at one seller from its bids before and after (buyer -> Bid)."""
    events = []
    demand_before = sum(b.quantity for b in before_bids.values() if b.active)
    demand_after = sum(b.quantity for b in after_bids.values() if b.active)
    reducers = {i: before_bids[i].quantity - after_bids.get(i, Bid(i, 0.0, 0.0)).quantity
                for i in before_bids}
    reducers = {i: d for i, d in reducers.items() if d > QTY_EPS}
    if reducers and demand_before >= capacity - QTY_EPS and demand_after < capacity - QTY_EPS:
        trigger = max(sorted(reducers, key=_id_key), key=lambda i: reducers[i])
        events.append(ShiftEvent(DEMAND_SHORTFALL, seller_id, trigger, round, {
            "demand_before": demand_before, "demand_after": demand_after,
            "capacity": capacity, "winners": sorted(winners, key=_id_key)}))

    active_before = {i: b for i, b in before_bids.items() if b.active}
    active_after = {i: b for i, b in after_bids.items() if b.active}
    for b in sorted(active_after, key=_id_key):
        p_new = active_after[b].unit_price
        p_old = active_before[b].unit_price if b in active_before else None
        if p_old is not None and p_new <= p_old:
            continue
        passed = []
        for k in sorted(active_before, key=_id_key):
            if k == b or k not in active_after:
                continue
            was_below = p_old is None or p_old < active_before[k].unit_price
            if was_below and p_new > active_after[k].unit_price:
                passed.append(k)
        if passed:
            events.append(ShiftEvent(BID_OVERTAKE, seller_id, b, round, {
                "old_price": p_old, "new_price": p_new, "overtaken": passed,
                "winners": sorted(winners, key=_id_key)}))
    return events


def detect_market_shift(before: MarketState, after: MarketState, round=None) -> list:
    if not before.same_universe(after):
        raise ValueError("market states cover different agent universes")
    events = []
    for j in after.seller_ids():
        bb = {b.buyer_id: b for b in before.book(j).bids}
        ab = {b.buyer_id: b for b in after.book(j).bids}
        book = after.book(j)
        winners = allocate(book).winners if book.capacity > 0 else ()
        events.extend(seller_shifts(bb, ab, after.sellers[j].capacity, j, round, winners))
    return events


# ---------------------------------------------------------------- saturation

@dataclass(frozen=True)
class DeviationGrid:
    price_moves: tuple = (0.01, 0.02, 0.05, 0.10)
    quantity_moves: tuple = (0.01, 0.02, 0.05, 0.10)
    withdrawal: bool = True
    overtakes: bool = True


@dataclass(frozen=True)
class Deviation:
    buyer: Hashable
    label: str
    bids: dict
    gain: float


@dataclass(frozen=True)
class SaturationReport:
    saturated: bool
    witness: Optional[Deviation] = None
    violations: tuple = ()

    def __bool__(self):
        return self.saturated


def candidate_deviations(market: MarketState, i, grid: DeviationGrid) -> list:
    """Unilateral deviations of buyer ``i`` as ``(label, {seller: Bid})``."""
    linked = market.sellers_linked_to(i)
    current = {j: market.bid(i, j) for j in linked if market.bid(i, j).active}
    out = []
    if grid.withdrawal and current:
        out.append(("withdraw", {}))
    for m in grid.price_moves:
        for sign in (1, -1):
            out.append((f"price{sign * m:+.2f}",
                        {j: Bid(i, b.quantity, max(b.unit_price * (1 + sign * m), 0.0))
                         for j, b in current.items()}))
    for m in grid.quantity_moves:
        for sign in (1, -1):
            out.append((f"quantity{sign * m:+.2f}",
                        {j: Bid(i, max(b.quantity * (1 + sign * m), 0.0), b.unit_price)
                         for j, b in current.items()}))
    if grid.overtakes:
        for j in linked:
            mine = current.get(j)
            book = market.book(j)
            for k in book.active_bids:
                if k.buyer_id == i or (mine is not None and k.unit_price <= mine.unit_price):
                    continue
                q = (mine.quantity if mine else 0.0) + market.award(k.buyer_id, j)
                if q <= QTY_EPS:
                    continue
                bids = dict(current)
                bids[j] = Bid(i, q, k.unit_price + market.epsilon)
                out.append((f"overtake:{j}:{k.buyer_id}", bids))
    return out


def buyers_in_shell(market: MarketState, shell: InfluenceShell) -> list:
    index = ActiveIndex.from_market(market)
    found = set()
    for j in shell.ids:
        found |= buyers_of_seller(index, j)
    return sorted(found, key=_id_key)


def is_saturated(market: MarketState, shell: InfluenceShell,
                 deviation_grid: DeviationGrid = DeviationGrid(),
                 epsilon: Optional[float] = None) -> SaturationReport:
    """No buyer bidding into the shell gains more than epsilon from a grid deviation."""
    eps = market.epsilon if epsilon is None else epsilon
    violations = []
    for i in buyers_in_shell(market, shell):
        profile = market.buyers[i]
        books = [market.book(j) for j in market.sellers_linked_to(i)]
        current = {j: market.bid(i, j) for j in market.sellers_linked_to(i)}
        u0, _, _ = evaluate_bids(profile, books, current)
        for label, bids in candidate_deviations(market, i, deviation_grid):
            u1, _, _ = evaluate_bids(profile, books, bids)
            if u1 - u0 > eps:
                violations.append(Deviation(i, label, bids, u1 - u0))
    if not violations:
        return SaturationReport(True)
    witness = max(violations, key=lambda d: d.gain)
    return SaturationReport(False, witness, tuple(violations))


# ---------------------------------------------------------------- monotonicity

@dataclass(frozen=True)
class MonotonicityReport:
    ok: bool
    index: Optional[int] = None
    reason: Optional[str] = None

    def __bool__(self):
        return self.ok


def check_local_monotonicity(trace: Sequence[MarketState], sellers: Optional[set] = None) -> MonotonicityReport:
    """Reserves never fall and satisfied ladder tuples never flip along ``trace``."""
    prev_reserve, prev_ok = None, None
    for t, state in enumerate(trace):
        shell = set(state.sellers) if sellers is None else set(sellers)
        reserves = {j: state.sellers[j].reserve for j in shell}
        if prev_reserve is not None:
            for j in sorted(shell, key=_id_key):
                if j in prev_reserve and reserves[j] < prev_reserve[j]:
                    return MonotonicityReport(False, t, f"reserve of seller {j!r} decreased "
                                                        f"{prev_reserve[j]} -> {reserves[j]}")
        ok = {tp.key: tp.ok for tp in ladder_tuples(state, shell).tuples}
        if prev_ok is not None:
            for key, was_ok in prev_ok.items():
                if was_ok and ok.get(key) is False:
                    return MonotonicityReport(False, t, f"ladder tuple {key} reversed")
        prev_reserve, prev_ok = reserves, ok
    return MonotonicityReport(True)
