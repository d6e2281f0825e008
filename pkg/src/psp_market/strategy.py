"""Buyer-side logic: parabolic valuations, bounded participation, joint best response."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .market_core import (QTY_EPS, AgentId, Bid, PriceStaircase, SellerBook,
                          allocate, exclusion_cost, opponent_staircase)

CONSTRAINT_LIMITED = "constraint-limited"
INTERIOR = "interior"
PRICE_LIMITED = "price-limited"
REGIMES = (CONSTRAINT_LIMITED, INTERIOR, PRICE_LIMITED)


@dataclass(frozen=True)
class BuyerProfile:
    """Parabolic valuation ``theta(z) = kappa * (q_bar - z/2) * z`` on ``[0, q_bar]``.

    ``q_bar`` doubles as the buyer's demand cap.  The budget is carried for
    reporting only; no payment rule consumes it.
    """

    buyer_id: AgentId
    q_bar: float
    kappa: float
    budget: float = 0.0
    epsilon_improve: Optional[float] = None

    def __post_init__(self):
        if not (self.q_bar > 0 and self.kappa > 0):
            raise ValueError(f"buyer {self.buyer_id!r}: q_bar and kappa must be positive")

    @property
    def p_bar(self) -> float:
        """Largest marginal value the buyer ever places on the resource."""
        return self.kappa * self.q_bar


def _check_domain(profile: BuyerProfile, z: float):
    if not (-QTY_EPS <= z <= profile.q_bar + QTY_EPS):
        raise ValueError(f"z={z} outside [0, {profile.q_bar}] for buyer {profile.buyer_id!r}")


def valuation(profile: BuyerProfile, z: float) -> float:
    _check_domain(profile, z)
    return profile.kappa * (profile.q_bar - z / 2.0) * z


def marginal_valuation(profile: BuyerProfile, z: float) -> float:
    _check_domain(profile, z)
    return profile.kappa * (profile.q_bar - z)


def satiated_value(profile: BuyerProfile, z: float) -> float:
    """Valuation with units beyond ``q_bar`` adding nothing."""
    return valuation(profile, min(max(z, 0.0), profile.q_bar))


def desired_total(profile: BuyerProfile, caps: Sequence[float]) -> float:
    return min(profile.q_bar, sum(caps))


@dataclass(frozen=True)
class Selection:
    quantities: dict
    shortfall: bool = False


def select_sellers(profile: BuyerProfile, offers: Sequence[tuple], z_star: float) -> Selection:
    """Fill ``z_star`` from the cheapest offers first.

    ``offers`` are ``(seller_id, price, cap)``; a seller may appear more than
    once (one offer per price segment) and its quantities accumulate.
    Sellers not reached are left out of the map.
    """
    quantities: dict = {}
    left = z_star
    ranked = sorted(enumerate(offers), key=lambda e: (e[1][1], e[0]))
    for _, (sid, _, cap) in ranked:
        if left <= QTY_EPS:
            break
        take = min(cap, left)
        if take > QTY_EPS:
            quantities[sid] = quantities.get(sid, 0.0) + take
            left -= take
    return Selection(quantities, shortfall=left > QTY_EPS)


@dataclass(frozen=True)
class BidVector:
    """One buyer's bids across its adjacent sellers plus best-response diagnostics."""

    buyer_id: AgentId
    entries: dict = field(default_factory=dict)
    z_hat: float = 0.0
    p_star: float = 0.0
    regime: Optional[str] = None

    @property
    def total(self) -> float:
        return sum(b.quantity for b in self.entries.values())


@dataclass(frozen=True)
class BuyerSnapshot:
    """What a buyer sees: the books of its adjacent sellers."""

    books: tuple
    epsilon: float = 2.5
    per_seller_price: bool = False


def staircase_intersection(profile: BuyerProfile, staircase: PriceStaircase) -> tuple:
    """Largest ``z`` with ``theta'(z) >= P(z)``, capped at ``q_bar``.

    Returns ``(z_hat, p_star)`` with ``p_star = P(z_hat)``.  Because
    ``theta'`` is linear the crossing inside a step is solved exactly.
    """
    z = 0.0
    p_star = staircase.segments[0][0] if staircase.segments else 0.0
    for price, q, _ in staircase.segments:
        if z >= profile.q_bar:
            break
        end = min(z + q, profile.q_bar)
        if profile.kappa * (profile.q_bar - z) <= price:
            # marginal value already below this step: stop at its left edge
            return z, (p_star if z > 0 else price)
        if profile.kappa * (profile.q_bar - end) >= price:
            z, p_star = end, price
            continue
        return profile.q_bar - price / profile.kappa, price
    return z, p_star


def regime_classify(marginal_at_z: float, p_star: float, tol: float) -> str:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if marginal_at_z > p_star + tol:
        return CONSTRAINT_LIMITED
    if marginal_at_z < p_star - tol:
        return PRICE_LIMITED
    return INTERIOR


def joint_best_response(profile: BuyerProfile, snapshot: BuyerSnapshot) -> BidVector:
    """Uniform-price best reply against the opponents' aggregate staircase.

    The target total is the crossing of ``theta'`` with the staircase, pulled
    back by ``epsilon / theta'(0)`` so the posted price ``w = theta'(v)`` sits
    strictly above the marginal opponent.  Quantities go to the cheapest
    segments first (bounded participation).
    """
    if not snapshot.books:
        return BidVector(profile.buyer_id)
    stair = opponent_staircase(snapshot.books, profile.buyer_id)
    z_hat, p_star = staircase_intersection(profile, stair)
    if stair.segments:
        first_price = stair.segments[0][0]
    else:
        first_price = 0.0
    if z_hat <= QTY_EPS:
        regime = regime_classify(marginal_valuation(profile, 0.0), first_price,
                                 1e-6 * profile.p_bar)
        return BidVector(profile.buyer_id, {}, 0.0, first_price, regime)
    regime = regime_classify(marginal_valuation(profile, z_hat), p_star, 1e-6 * profile.p_bar)

    v = max(z_hat - snapshot.epsilon / profile.p_bar, 0.0)
    if v <= QTY_EPS:
        return BidVector(profile.buyer_id, {}, z_hat, p_star, regime)
    w = marginal_valuation(profile, v)
    offers = [(sid, price, q) for price, q, sid in stair.segments]
    chosen = select_sellers(profile, offers, v).quantities
    entries = {}
    for book in snapshot.books:
        sid = book.seller_id
        q = chosen.get(sid, 0.0)
        if q <= QTY_EPS:
            continue
        price = w
        if snapshot.per_seller_price:
            # per-seller mode: price each seller at its own marginal segment
            seg_prices = [p for p, qq, s in stair.segments if s == sid and p <= p_star]
            price = max(w, max(seg_prices, default=w))
        entries[sid] = Bid(profile.buyer_id, q, price)
    return BidVector(profile.buyer_id, entries, z_hat, p_star, regime)


def buyer_update(profile: BuyerProfile, current_awards: Mapping, sellers: Sequence) -> dict:
    """Coupled rebid: post the same residual demand to every adjacent seller."""
    residual = max(profile.q_bar - sum(current_awards.values()), 0.0)
    return {j: residual for j in sellers}


def accept_update(u_new: float, u_old: float, eps: float) -> bool:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return u_new - u_old > eps


def utility(value: float, cost: float) -> float:
    return value - cost


def evaluate_bids(profile: BuyerProfile, books: Sequence[SellerBook], bids: Mapping) -> tuple:
    """Utility of posting ``bids`` (seller_id -> Bid) with opponents held fixed.

    Returns ``(utility, awards, costs)``; each seller is re-cleared with the
    buyer's bid replaced and the payment is the exclusion-compensation cost
    against that seller's opposing bids.
    """
    awards, costs = {}, {}
    for book in books:
        sid = book.seller_id
        bid = bids.get(sid)
        if bid is None or not bid.active:
            awards[sid] = 0.0
            costs[sid] = 0.0
            continue
        trial = book.with_bid(bid)
        a = allocate(trial).awards.get(profile.buyer_id, 0.0)
        awards[sid] = a
        costs[sid] = exclusion_cost(opponent_staircase([book], profile.buyer_id), a) if a > 0 else 0.0
    value = satiated_value(profile, sum(awards.values()))
    return utility(value, sum(costs.values())), awards, costs
