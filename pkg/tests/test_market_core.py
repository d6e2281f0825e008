from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from psp_market.harness import brute_force_allocation_oracle
from psp_market.market_core import (Bid, ConfigurationError, PriceStaircase, SellerBook, allocate,
                                    clearing_price, exclusion_cost, margins, opponent_staircase,
                                    progressive_steps, residual_at_price, update_reserve)
from strategies import books

LADDER0 = (Bid("B0", 8, 40), Bid("B1", 2, 4), Bid("B2", 6, 1))


def book(cap, bids, reserve=0.0, eps=2.5):
    return SellerBook("s", cap, reserve, tuple(Bid(f"b{k}", q, p) for k, (q, p) in enumerate(bids)), eps)


class TestResidual:
    def test_below_two_tiers(self):
        assert residual_at_price(SellerBook(0, 15, bids=LADDER0), 1.0) == 5

    def test_empty(self):
        assert residual_at_price(book(10, []), 0.0) == 10

    def test_single_tier_absorbs(self):
        assert residual_at_price(book(10, [(12, 5)]), 3.0) == 0


class TestAllocate:
    def test_ladder_seller0(self):
        r = allocate(SellerBook(0, 15, bids=LADDER0))
        assert r.awards == {"B0": 8, "B1": 2, "B2": 5}
        assert r.clearing_price == 1.0

    def test_ladder_seller1(self):
        r = allocate(SellerBook(1, 8, bids=(Bid("B0", 8, 40),)))
        assert r.awards == {"B0": 8} and r.clearing_price == 40.0

    def test_tie_split(self):
        r = allocate(SellerBook("s", 10, bids=(Bid("A", 8, 5), Bid("B", 4, 5))))
        assert r.awards["A"] == pytest.approx(20 / 3, abs=1e-12)
        assert r.awards["B"] == pytest.approx(10 / 3, abs=1e-12)

    @pytest.mark.parametrize("cap", [0.0, -1.0])
    def test_rejects_bad_capacity(self, cap):
        with pytest.raises(ConfigurationError):
            allocate(book(cap, [(1, 1)]))

    def test_zero_quantity_bid_is_inactive(self):
        r = allocate(book(5, [(0, 100), (3, 1)]))
        assert r.winners == frozenset({"b1"})

    def test_negative_bid_rejected(self):
        with pytest.raises(ValueError):
            Bid("x", -1, 2)

    @given(books())
    def test_never_over_awards(self, b):
        r = allocate(b)
        for bid in b.active_bids:
            assert r.awards[bid.buyer_id] <= bid.quantity + 1e-12
        assert r.total_awarded <= b.capacity + 1e-9
        assert r.winners == {i for i, a in r.awards.items() if a > 1e-9}

    @given(books())
    def test_matches_rational_oracle(self, b):
        got = allocate(b).awards
        want = brute_force_allocation_oracle(b.bids, b.capacity).awards
        for i, a in want.items():
            assert abs(got.get(i, 0.0) - float(a)) < 1e-9


class TestClearingAndMargins:
    def test_slack_supply_falls_to_reserve(self):
        b = book(10, [(3, 7)], reserve=0.5)
        assert clearing_price(b, allocate(b)) == 0.5

    def test_margins_all_win(self):
        b = SellerBook(0, 15, bids=LADDER0)
        assert margins(b, allocate(b)) == (1.0, None)

    def test_margins_first_tier_exhausts(self):
        b = book(8, [(8, 40), (8, 4)])
        assert margins(b, allocate(b)) == (40.0, 4.0)

    def test_margins_empty(self):
        b = book(8, [])
        assert margins(b, allocate(b)) == (None, None)

    @given(books())
    def test_margin_chain(self, b):
        r = allocate(b)
        lo, hi = margins(b, r)
        if lo is not None and hi is not None:
            assert hi < r.clearing_price <= lo


class TestReserve:
    def test_reactive_from_loser(self):
        b = SellerBook("L1", 4, 0.0, (Bid("B3", 2, 2.0), Bid("B4", 2, 1.9), Bid("B5", 3, 1.8)), 0.1)
        assert update_reserve(b, allocate(b)) == pytest.approx(1.9)

    def test_no_losers_keeps_reserve(self):
        b = book(10, [(2, 3)], reserve=5.0)
        assert update_reserve(b, allocate(b)) == 5.0

    def test_prior_reserve_dominates(self):
        b = book(2, [(2, 3), (1, 1.5)], reserve=2.0, eps=0.1)
        assert update_reserve(b, allocate(b)) == 2.0

    def test_other_rules(self):
        b = book(8, [(8, 40), (8, 4)], eps=2.5)
        r = allocate(b)
        assert update_reserve(b, r, "clearing") == 40.0
        assert update_reserve(b, r, "underline_minus_eps") == 37.5
        with pytest.raises(ConfigurationError):
            update_reserve(b, r, "nope")

    @given(books(), st.sampled_from(["reactive", "clearing", "underline_minus_eps"]))
    def test_never_decreases(self, b, rule):
        assert update_reserve(b, allocate(b), rule) >= b.reserve


class TestProgressiveSteps:
    def test_second_price_walk(self):
        b = SellerBook("L1", 6, 0.0, (Bid("B3", 2, 2.0), Bid("B4", 2, 1.8), Bid("B5", 3, 1.5)), 0.1)
        steps = progressive_steps(b, allocate(b), 0.0)
        assert [(s.buyer_id, s.unit_charge) for s in steps] == [("B3", 1.8), ("B4", 1.5), ("B5", 1.5 + 0.1)]
        assert [s.k for s in steps] == [1, 2, 3]

    def test_lone_winner_pays_reserve(self):
        b = book(5, [(2, 9)], reserve=1.25)
        (s,) = progressive_steps(b, allocate(b), 1.25)
        assert s.unit_charge == 1.25 and s.ask_after is None


class TestStaircase:
    def test_floor_then_opponent(self):
        st_ = opponent_staircase([book(10, [(6, 4)])], "me")
        assert st_.steps == [(0.0, 4.0), (4.0, 10.0)]
        assert exclusion_cost(st_, 3) == 0.0
        assert exclusion_cost(st_, 8) == 16.0
        assert exclusion_cost(st_, 10) == 24.0

    def test_no_opponents_floor_only(self):
        st_ = opponent_staircase([book(10, [], reserve=1.5)], "me")
        assert st_.steps == [(1.5, 10.0)]

    def test_two_sellers_two_steps(self):
        books_ = [SellerBook(0, 60, bids=(Bid("x", 60, 3.0),)),
                  SellerBook(1, 40, bids=(Bid("y", 40, 5.0),))]
        assert [p for p, _ in opponent_staircase(books_, "me").steps] == [3.0, 5.0]

    def test_explicit_descending_staircase_costs(self):
        desc = PriceStaircase(((4.0, 6.0, "s"), (0.0, 4.0, "s")))
        assert exclusion_cost(desc, 3) == 12.0
        assert exclusion_cost(desc, 8) == 24.0
        assert exclusion_cost(desc, 0) == 0.0

    def test_over_supply_is_error(self):
        with pytest.raises(ValueError):
            exclusion_cost(opponent_staircase([book(10, [])], "me"), 10.5)

    def test_own_bid_excluded(self):
        b = SellerBook(0, 10, bids=(Bid("me", 10, 50.0), Bid("o", 4, 2.0)))
        assert opponent_staircase([b], "me").steps == [(0.0, 6.0), (2.0, 10.0)]

    @given(books(), st.floats(0, 1), st.floats(0, 1))
    def test_cost_increments_bounded_by_prices(self, b, u, v):
        s = opponent_staircase([b], "me")
        z1, z2 = sorted((u * s.total, v * s.total))
        d = exclusion_cost(s, z2) - exclusion_cost(s, z1)
        assert d >= -1e-9
        assert s.price_at(z1) * (z2 - z1) - 1e-9 <= d <= s.price_at(z2) * (z2 - z1) + 1e-9

    @given(books(), st.sampled_from([0.0, 0.5, 1.0, 2.0, 4.0, 10.0, 50.0]))
    def test_inverse_consistency(self, b, y):
        s = opponent_staircase([b], "me")
        assert s.price_at(s.quantity_at(y)) <= y


def test_oracle_examples():
    r = brute_force_allocation_oracle(LADDER0, 15)
    assert r.awards == {"B0": 8, "B1": 2, "B2": 5}
    r = brute_force_allocation_oracle((Bid("A", 8, 5), Bid("B", 4, 5)), 10)
    assert r.awards == {"A": Fraction(20, 3), "B": Fraction(10, 3)}
    assert brute_force_allocation_oracle((Bid("A", 3, 1),), 10).awards == {"A": 3}
