"""Mutable market state shared by the engine, the analysis code and the harness."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable

from .market_core import QTY_EPS, Bid, SellerBook, _id_key
from .strategy import BuyerProfile


@dataclass
class SellerState:
    seller_id: Hashable
    capacity: float
    reserve: float = 0.0
    clearing_price: float = 0.0
    revenue: float = 0.0


@dataclass
class MarketState:
    """Biadjacency, bids, awards, payments and seller state at one instant.

    ``links`` holds the feasible (buyer, seller) pairs; ``bids``, ``awards``
    and ``payments`` are keyed by the same pairs.
    """

    buyers: dict = field(default_factory=dict)
    sellers: dict = field(default_factory=dict)
    links: set = field(default_factory=set)
    bids: dict = field(default_factory=dict)
    awards: dict = field(default_factory=dict)
    payments: dict = field(default_factory=dict)
    epsilon: float = 2.5
    clock: float = 0.0

    @classmethod
    def build(cls, buyers, sellers, links, epsilon=2.5, bids=None):
        m = cls(buyers={b.buyer_id: b for b in buyers},
                sellers={s.seller_id: s for s in sellers},
                links=set(links), epsilon=epsilon)
        for (i, j), (q, p) in (bids or {}).items():
            m.set_bid(i, j, q, p)
        return m

    def buyer_ids(self) -> list:
        return sorted(self.buyers, key=_id_key)

    def seller_ids(self) -> list:
        return sorted(self.sellers, key=_id_key)

    def sellers_linked_to(self, i) -> list:
        return [j for j in self.seller_ids() if (i, j) in self.links]

    def set_bid(self, i, j, quantity, price):
        if (i, j) not in self.links:
            raise ValueError(f"no link between buyer {i!r} and seller {j!r}")
        self.bids[(i, j)] = Bid(i, float(quantity), float(price))

    def bid(self, i, j) -> Bid:
        return self.bids.get((i, j), Bid(i, 0.0, 0.0))

    def book(self, j) -> SellerBook:
        s = self.sellers[j]
        bids = tuple(self.bids[(i, jj)] for (i, jj) in sorted(self.bids, key=lambda k: _id_key(k[0]))
                     if jj == j)
        return SellerBook(j, s.capacity, s.reserve, bids, self.epsilon)

    def active_pairs(self) -> set:
        return {k for k, b in self.bids.items() if b.quantity > QTY_EPS}

    def award(self, i, j) -> float:
        return self.awards.get((i, j), 0.0)

    def buyer_awards(self, i) -> dict:
        return {j: self.award(i, j) for j in self.sellers_linked_to(i)}

    def copy(self) -> "MarketState":
        # profiles and bids are immutable; only seller records need fresh objects
        return MarketState(dict(self.buyers), {j: replace(s) for j, s in self.sellers.items()},
                           set(self.links), dict(self.bids), dict(self.awards),
                           dict(self.payments), self.epsilon, self.clock)

    def same_universe(self, other: "MarketState") -> bool:
        return set(self.buyers) == set(other.buyers) and set(self.sellers) == set(other.sellers)
