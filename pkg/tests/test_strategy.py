import math

import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from psp_market.market_core import Bid, SellerBook, opponent_staircase
from psp_market.strategy import (CONSTRAINT_LIMITED, INTERIOR, PRICE_LIMITED, REGIMES, BuyerProfile,
                                 BuyerSnapshot, accept_update, buyer_update, desired_total,
                                 evaluate_bids, joint_best_response, marginal_valuation,
                                 regime_classify, select_sellers, staircase_intersection, utility,
                                 valuation)

profiles = st.builds(BuyerProfile, st.just("b"), st.floats(1.0, 80.0), st.floats(0.2, 5.0))


def test_valuation_examples():
    p = BuyerProfile("b", 10, 1)
    assert valuation(p, 0) == 0
    assert valuation(p, 10) == 50
    assert marginal_valuation(BuyerProfile("b", 60, 1.1), 0) == pytest.approx(66)
    assert marginal_valuation(BuyerProfile("b", 10, 2), 4) == 12
    assert marginal_valuation(p, 10) == 0


def test_marginal_near_reported_band():
    # intercept 66, slope 1.1 -> q_bar 60
    assert marginal_valuation(BuyerProfile("b", 60, 1.1), 28.2) == pytest.approx(34.98)


@pytest.mark.parametrize("z", [-0.5, 10.5])
def test_domain_errors(z):
    p = BuyerProfile("b", 10, 1)
    with pytest.raises(ValueError):
        valuation(p, z)
    with pytest.raises(ValueError):
        marginal_valuation(p, z)


def test_profile_validation():
    with pytest.raises(ValueError):
        BuyerProfile("b", 0, 1)


@given(profiles, st.floats(0, 1), st.floats(0, 1))
def test_marginal_strictly_decreasing(p, u, v):
    z1, z2 = sorted((u * p.q_bar, v * p.q_bar))
    if z2 - z1 > 1e-9:
        assert marginal_valuation(p, z1) > marginal_valuation(p, z2)


@given(profiles, st.floats(0, 1))
def test_valuation_is_integral_of_marginal(p, u):
    z = u * p.q_bar
    integral, _ = quad(lambda x: marginal_valuation(p, x), 0, z, epsabs=0, epsrel=1e-12)
    assert abs(valuation(p, z) - integral) <= 1e-9 * max(1.0, abs(valuation(p, z)))


def test_desired_total():
    assert desired_total(BuyerProfile("b", 50, 1), [20, 20]) == 40
    assert desired_total(BuyerProfile("b", 50, 1), [40, 30]) == 50
    assert desired_total(BuyerProfile("b", 28.3, 1), [20, 20]) == 28.3


class TestSelectSellers:
    p = BuyerProfile("b", 60, 1)

    def test_cheapest_first(self):
        sel = select_sellers(self.p, [("s1", 2, 25), ("s2", 3, 30)], 40)
        assert sel.quantities == {"s1": 25, "s2": 15} and not sel.shortfall

    def test_no_demand(self):
        assert select_sellers(self.p, [("s", 1, 5)], 0).quantities == {}

    def test_exact_fit(self):
        assert select_sellers(self.p, [("s", 1, 10)], 10).quantities == {"s": 10}

    def test_shortfall(self):
        sel = select_sellers(self.p, [("s", 1, 10)], 12)
        assert sel.quantities == {"s": 10} and sel.shortfall

    @given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 10), st.floats(0, 20)), max_size=6),
           st.floats(0, 60))
    def test_prefix_and_total(self, offers, z):
        sel = select_sellers(self.p, offers, z)
        assert sum(sel.quantities.values()) == pytest.approx(min(z, sum(o[2] for o in offers)), abs=1e-6)
        # anything left unused must be at least as expensive as everything used
        ranked = sorted(enumerate(offers), key=lambda e: (e[1][1], e[0]))
        left, used_prices, skipped_prices = z, [], []
        for _, (sid, price, cap) in ranked:
            if cap <= 1e-9:  # empty offers are neither used nor skipped
                continue
            take = min(cap, max(left, 0))
            (used_prices if take > 1e-9 else skipped_prices).append(price)
            left -= take
        if used_prices and skipped_prices and left <= 1e-9:
            assert max(used_prices) <= min(skipped_prices) + 1e-12


class TestRegime:
    def test_examples(self):
        assert regime_classify(40, 32.1, 0.5) == CONSTRAINT_LIMITED
        assert regime_classify(32.1, 32.1, 0.0) == INTERIOR
        assert regime_classify(20, 32.1, 0.5) == PRICE_LIMITED

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 5))
    def test_partition(self, m, p, tol):
        labels = [r for r in REGIMES if regime_classify(m, p, tol) == r]
        assert len(labels) == 1


class TestBestResponse:
    def test_interior_crossing(self):
        p = BuyerProfile("b", 60, 1.1)
        books = (SellerBook(0, 60, bids=(Bid("o", 60, 30.0),)),)
        stair = opponent_staircase(books, "b")
        z_hat, p_star = staircase_intersection(p, stair)
        assert marginal_valuation(p, z_hat) == pytest.approx(p_star)
        br = joint_best_response(p, BuyerSnapshot(books, 2.5))
        assert br.regime == INTERIOR

    def test_constraint_limited(self):
        p = BuyerProfile("b", 60, 1.1)
        books = (SellerBook(0, 10, bids=()),)
        br = joint_best_response(p, BuyerSnapshot(books, 2.5))
        assert br.regime == CONSTRAINT_LIMITED
        assert br.z_hat == 10

    def test_high_availability(self):
        p = BuyerProfile("b", 60, 1.1)
        books = (SellerBook(0, 60, 0.0, (Bid("o", 60, 8.58),)), SellerBook(1, 40, bids=()))
        br = joint_best_response(p, BuyerSnapshot(books, 2.5))
        assert br.z_hat == pytest.approx(52.2)

    def test_empty_adjacency(self):
        br = joint_best_response(BuyerProfile("b", 10, 1), BuyerSnapshot(()))
        assert br.entries == {} and br.total == 0

    @given(profiles, st.lists(st.tuples(st.floats(0.5, 30), st.floats(0, 60)), max_size=4),
           st.floats(5, 60), st.floats(5, 60))
    def test_bid_vector_respects_cap_and_adjacency(self, p, opp, c0, c1):
        books = (SellerBook(0, c0, bids=tuple(Bid(f"o{k}", q, pr) for k, (q, pr) in enumerate(opp))),
                 SellerBook(1, c1, bids=()))
        br = joint_best_response(p, BuyerSnapshot(books, 2.5))
        assert br.total <= p.q_bar + 1e-9
        assert set(br.entries) <= {0, 1}
        assert br.regime in REGIMES

    def test_fixed_point_is_stable(self):
        p = BuyerProfile("b", 20, 2)
        books = (SellerBook(0, 30, bids=(Bid("o", 30, 10.0),)),)
        first = joint_best_response(p, BuyerSnapshot(books, 2.5))
        posted = tuple(b.with_bid(first.entries[b.seller_id]) for b in books)
        again = joint_best_response(p, BuyerSnapshot(posted, 2.5))
        assert again.entries == first.entries


def test_buyer_update():
    p = BuyerProfile("b", 60, 1)
    assert buyer_update(p, {0: 20, 1: 8}, [0, 1]) == {0: 32, 1: 32}
    assert buyer_update(p, {0: 60}, [0, 1]) == {0: 0, 1: 0}
    assert buyer_update(p, {}, [0, 1]) == {0: 60, 1: 60}
    assert buyer_update(p, {0: 70}, [0]) == {0: 0}


@given(profiles, st.lists(st.floats(0, 30), max_size=3))
def test_buyer_update_conserves_cap(p, awards):
    aw = dict(enumerate(awards))
    if sum(aw.values()) <= p.q_bar:
        res = buyer_update(p, aw, [0])
        assert res[0] + sum(aw.values()) == pytest.approx(p.q_bar)


def test_accept_update():
    assert accept_update(10, 5, 2.5)
    assert not accept_update(5, 5, 2.5)
    assert not accept_update(7.5, 5, 2.5)
    with pytest.raises(ValueError):
        accept_update(1, 0, 0)


def test_utility():
    assert utility(50, 20) == 30
    assert utility(0, 0) == 0


def test_utility_matches_staircase_cost():
    p = BuyerProfile("b", 60, 1.1)
    book = SellerBook(0, 28.2, bids=(Bid("o", 10, 5.0),))
    u, awards, costs = evaluate_bids(p, [book], {0: Bid("b", 28.2, 40.0)})
    assert awards[0] == pytest.approx(28.2)
    assert costs[0] == pytest.approx(10 * 5.0)
    assert u == pytest.approx(valuation(p, 28.2) - 50.0)
    assert not math.isnan(u)
