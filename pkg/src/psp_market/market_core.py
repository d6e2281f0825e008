"""Single-seller PSP auction mathematics.

Everything here is a pure function of immutable inputs: bid ordering,
residual supply, the proportional tie-split allocation, clearing price,
margin prices, reserve updates and the opponents' inverse price staircase
used for exclusion-compensation payments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

AgentId = Hashable

#: quantities at or below this are treated as zero (no phantom winners)
QTY_EPS = 1e-9

RESERVE_RULES = ("reactive", "clearing", "underline_minus_eps")


class ConfigurationError(ValueError):
    """Raised for an invalid auction configuration (e.g. non-positive capacity)."""


@dataclass(frozen=True)
class Bid:
    buyer_id: AgentId
    quantity: float
    unit_price: float

    def __post_init__(self):
        if not (self.quantity >= 0.0) or not (self.unit_price >= 0.0):
            raise ValueError(f"bid must be nonnegative: {self!r}")

    @property
    def active(self) -> bool:
        return self.quantity > QTY_EPS


@dataclass(frozen=True)
class SellerBook:
    """A seller's capacity, reserve and the bids it currently holds."""

    seller_id: AgentId
    capacity: float
    reserve: float = 0.0
    bids: tuple = ()
    epsilon: float = 2.5

    active_bids: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "bids", tuple(self.bids))
        object.__setattr__(self, "active_bids", tuple(b for b in self.bids if b.active))

    def without(self, buyer_id: AgentId) -> "SellerBook":
        return SellerBook(self.seller_id, self.capacity, self.reserve,
                          tuple(b for b in self.bids if b.buyer_id != buyer_id),
                          self.epsilon)

    def with_bid(self, bid: Bid) -> "SellerBook":
        """Replace (or add) the bid of ``bid.buyer_id``."""
        rest = tuple(b for b in self.bids if b.buyer_id != bid.buyer_id)
        return SellerBook(self.seller_id, self.capacity, self.reserve,
                          rest + (bid,), self.epsilon)


@dataclass(frozen=True)
class AllocationResult:
    awards: dict
    clearing_price: float
    winners: frozenset
    lowest_winning: Optional[float] = None
    highest_losing: Optional[float] = None

    @property
    def total_awarded(self) -> float:
        return sum(self.awards.values())


def price_tiers(bids: Iterable[Bid]) -> list:
    """Group bids by exact price, highest price first; ties ordered by buyer id."""
    tiers: dict = {}
    for b in bids:
        tiers.setdefault(b.unit_price, []).append(b)
    return [(p, sorted(tiers[p], key=lambda b: _id_key(b.buyer_id)))
            for p in sorted(tiers, reverse=True)]


def _id_key(x):
    return (type(x).__name__, x)


def residual_at_price(book: SellerBook, y: float) -> float:
    """Supply left at price level ``y`` once every bid priced above ``y`` is filled."""
    above = sum(b.quantity for b in book.active_bids if b.unit_price > y)
    return max(book.capacity - above, 0.0)


def allocate(book: SellerBook) -> AllocationResult:
    """Descending-price greedy fill with proportional splitting inside a tied tier.

    At a tier with price ``y`` each tied bid receives
    ``min(q_i, q_i / sum(q_tied) * R(y))`` where ``R(y)`` is the supply left
    after all strictly higher tiers were served in full.
    """
    if not book.capacity > 0.0:
        raise ConfigurationError(f"seller {book.seller_id!r}: capacity must be > 0")
    awards: dict = {}
    served = 0.0
    for _, tier in price_tiers(book.active_bids):
        remaining = max(book.capacity - served, 0.0)
        tier_q = sum(b.quantity for b in tier)
        for b in tier:
            a = min(b.quantity, b.quantity / tier_q * remaining)
            awards[b.buyer_id] = a if a > QTY_EPS else 0.0
        served += sum(awards[b.buyer_id] for b in tier)

    winners = frozenset(i for i, a in awards.items() if a > QTY_EPS)
    prices = {b.buyer_id: b.unit_price for b in book.active_bids}
    low_win = min((prices[i] for i in winners), default=None)
    high_lose = max((prices[i] for i in awards if i not in winners), default=None)
    partial = AllocationResult(awards, 0.0, winners, low_win, high_lose)
    return AllocationResult(awards, clearing_price(book, partial), winners,
                            low_win, high_lose)


def clearing_price(book: SellerBook, result: AllocationResult) -> float:
    """Marginal price of the seller.

    When demand binds (total active requests reach capacity) this is the
    price of the marginal tier: the largest posted price ``y`` with
    ``sum(a_k : p_k >= y) >= Q``, which is the lowest winning bid.  With
    slack supply the clearing price falls back to the reserve.
    """
    demand = sum(b.quantity for b in book.active_bids)
    if demand < book.capacity - QTY_EPS or result.lowest_winning is None:
        return book.reserve
    return result.lowest_winning


def margins(book: SellerBook, result: AllocationResult) -> tuple:
    """``(lowest winning price, highest losing price)``, either may be ``None``."""
    return result.lowest_winning, result.highest_losing


def update_reserve(book: SellerBook, result: AllocationResult,
                   rule: str = "reactive") -> float:
    """Next reserve price; never below the current one.

    ``reactive`` keeps the reserve an epsilon above the highest losing bid,
    ``clearing`` lifts it to the clearing price and ``underline_minus_eps``
    to an epsilon below the lowest winning bid.
    """
    if rule == "reactive":
        target = None if result.highest_losing is None else result.highest_losing + book.epsilon
    elif rule == "clearing":
        target = result.clearing_price
    elif rule == "underline_minus_eps":
        target = None if result.lowest_winning is None else result.lowest_winning - book.epsilon
    else:
        raise ConfigurationError(f"unknown reserve rule {rule!r}; expected one of {RESERVE_RULES}")
    if target is None:
        return book.reserve
    return max(book.reserve, target)


@dataclass(frozen=True)
class TauStep:
    """One progressive allocation step at a seller."""

    k: int
    seller_id: AgentId
    buyer_id: AgentId
    awarded: float
    unit_charge: float
    ask_after: Optional[float]
    reserve_after: float
    clear: int = 0


def progressive_steps(book: SellerBook, result: AllocationResult,
                      reserve_after: float, clear: int = 0) -> list:
    """Resolve a cleared book one winner at a time, highest price first.

    Each served buyer is charged the next-highest remaining bid price.  After
    serving, the seller's ask moves to that remaining price plus epsilon; the
    last served buyer, with no competitor left, pays the larger of that ask
    and the reserve.  ``reserve_after`` is the (monotone) reserve the clear
    settles on and is recorded on every step.
    """
    order = [b for _, tier in price_tiers(book.active_bids) for b in tier]
    steps = []
    ask = None
    k = 1
    for pos, b in enumerate(order):
        if b.buyer_id not in result.winners:
            continue
        rest = order[pos + 1:]
        if rest:
            charge = rest[0].unit_price
            ask = rest[0].unit_price + book.epsilon
        else:
            charge = book.reserve if ask is None else max(ask, book.reserve)
            ask = None
        steps.append(TauStep(k, book.seller_id, b.buyer_id, result.awards[b.buyer_id],
                             charge, ask, reserve_after, clear))
        k += 1
    return steps


@dataclass(frozen=True)
class PriceStaircase:
    """Inverse price function of the opposing bids, as priced segments.

    ``segments`` are ``(price, quantity, seller_id)`` in order of increasing
    price: the first units a buyer can obtain are the cheapest.  ``P(z)`` is
    the price of the segment containing ``z`` (left-open, right-closed), and
    ``Q(y)`` the total quantity obtainable at prices ``<= y``.
    """

    segments: tuple = ()

    @property
    def steps(self) -> list:
        """``(price level, cumulative quantity)`` pairs."""
        out, cum = [], 0.0
        for price, q, _ in self.segments:
            cum += q
            if out and out[-1][0] == price:
                out[-1] = (price, cum)
            else:
                out.append((price, cum))
        return out

    @property
    def total(self) -> float:
        return sum(q for _, q, _ in self.segments)

    def price_at(self, z: float) -> float:
        """``P(z) = inf{y : Q(y) >= z}``."""
        if z > self.total + QTY_EPS:
            raise ValueError(f"quantity {z} exceeds available supply {self.total}")
        if z <= 0.0:
            return 0.0
        cum = 0.0
        for price, q, _ in self.segments:
            cum += q
            if z <= cum + QTY_EPS:
                return price
        return self.segments[-1][0] if self.segments else 0.0

    def quantity_at(self, y: float) -> float:
        return sum(q for price, q, _ in self.segments if price <= y)


def seller_segments(book: SellerBook, excluded_buyer: AgentId) -> list:
    """Segments of one seller's supply as seen by ``excluded_buyer``.

    Supply not claimed by any opponent priced above the floor costs the floor
    ``max(reserve, 0)``; each opponent tier above the floor releases its
    quantity at its own price.
    """
    floor = max(book.reserve, 0.0)
    opp = [b for b in book.active_bids if b.buyer_id != excluded_buyer]
    cap = book.capacity

    def avail(y):
        return max(cap - sum(b.quantity for b in opp if b.unit_price > y), 0.0)

    levels = sorted({b.unit_price for b in opp if b.unit_price > floor})
    segs = []
    prev = avail(floor)
    if prev > QTY_EPS:
        segs.append((floor, prev, book.seller_id))
    for p in levels:
        cur = avail(p)
        if cur - prev > QTY_EPS:
            segs.append((p, cur - prev, book.seller_id))
        prev = cur
    return segs


def opponent_staircase(seller_books: Sequence[SellerBook], excluded_buyer: AgentId) -> PriceStaircase:
    """Aggregate staircase over several sellers, cheapest segments first."""
    segs = []
    for order, book in enumerate(seller_books):
        segs.extend((p, q, sid, order) for p, q, sid in seller_segments(book, excluded_buyer))
    segs.sort(key=lambda s: (s[0], s[3]))
    return PriceStaircase(tuple((p, q, sid) for p, q, sid, _ in segs))


def exclusion_cost(staircase: PriceStaircase, awarded: float) -> float:
    """Integral of the staircase over ``[0, awarded]`` as a sum of rectangles."""
    if awarded < 0.0:
        raise ValueError("awarded quantity must be nonnegative")
    if awarded > staircase.total + QTY_EPS:
        raise ValueError(f"awarded {awarded} exceeds staircase supply {staircase.total}: infeasible allocation")
    cost, left = 0.0, awarded
    for price, q, _ in staircase.segments:
        if left <= 0.0:
            break
        take = min(q, left)
        cost += price * take
        left -= take
    return cost
