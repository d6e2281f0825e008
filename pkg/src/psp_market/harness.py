"""Experiment construction and checks.

Seeded random markets, seller revenue statistics, the two-seller price
ladder experiment, the scripted market-shift scenario, the connectivity
sweep and a brute-force allocation oracle for tests.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

from scipy.stats import spearmanr

from .engine import EngineConfig, run
from .influence import BID_OVERTAKE, ladder_tuples
from .market_core import QTY_EPS, AllocationResult, Bid, ConfigurationError, _id_key
from .rng import SplitMix64
from .state import MarketState, SellerState
from .strategy import BuyerProfile, buyer_update, marginal_valuation, satiated_value

BASE_SEED = 20405008
REPLICATE_STRIDE = 1000


@dataclass(frozen=True)
class ExperimentSpec:
    buyers: int = 8
    sellers: int = 2
    capacities: tuple = (60.0, 40.0)
    connectivity_percent: float = 50.0
    base_seed: int = BASE_SEED
    q_bar_range: tuple = (10.0, 60.0)
    kappa_range: tuple = (1.0, 3.5)
    budget_range: tuple = (100.0, 1000.0)
    epsilon: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        if self.buyers <= 0 or self.sellers <= 0:
            raise ConfigurationError("buyers and sellers must be positive counts")
        if len(self.capacities) != self.sellers:
            raise ConfigurationError(f"need {self.sellers} capacities, got {len(self.capacities)}")
        if any(not c > 0 for c in self.capacities):
            raise ConfigurationError("capacities must be > 0")
        if not 0.0 <= self.connectivity_percent <= 100.0:
            raise ConfigurationError("connectivity_percent must lie in [0, 100]")
        for name in ("q_bar_range", "kappa_range", "budget_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{name} is empty: {lo} > {hi}")
        if self.q_bar_range[0] <= 0 or self.kappa_range[0] <= 0:
            raise ConfigurationError("q_bar and kappa ranges must be positive")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")


def derive_seed(base_seed: int, level_index: int = 0, replicate: int = 0) -> int:
    return base_seed + level_index + REPLICATE_STRIDE * replicate


def generate_market(spec: ExperimentSpec, seed: Optional[int] = None) -> MarketState:
    """Draw a market from ``spec``.

    Per buyer, in id order: ``q_bar``, ``kappa``, budget, then one link draw
    per non-home seller.  Buyer ``i``'s home seller is ``i mod J``; each other
    seller is linked with probability ``connectivity_percent / 100``.
    """
    g = SplitMix64(spec.base_seed if seed is None else seed)
    share = spec.connectivity_percent / 100.0
    buyers, links = [], set()
    for i in range(spec.buyers):
        q_bar = g.uniform(*spec.q_bar_range)
        kappa = g.uniform(*spec.kappa_range)
        budget = g.uniform(*spec.budget_range)
        buyers.append(BuyerProfile(i, q_bar, kappa, budget))
        home = i % spec.sellers
        links.add((i, home))
        for j in range(spec.sellers):
            if j != home and g.random() < share:
                links.add((i, j))
    sellers = [SellerState(j, c) for j, c in enumerate(spec.capacities)]
    return MarketState.build(buyers, sellers, links, spec.epsilon)


def shared_fraction(market: MarketState) -> float:
    if not market.buyers:
        return 0.0
    return sum(len(market.sellers_linked_to(i)) > 1 for i in market.buyers) / len(market.buyers)


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class SellerStats:
    expected_revenue: float
    revenue_variance: float
    total_awarded: float


def seller_stats(market: MarketState, j) -> Optional[SellerStats]:
    """Allocation-weighted mean and variance of winning bid prices; ``None`` if nothing was awarded."""
    pairs = [(market.award(i, jj), market.bid(i, jj).unit_price)
             for (i, jj) in market.links if jj == j]
    pairs = [(a, p) for a, p in pairs if a > QTY_EPS]
    total = sum(a for a, _ in pairs)
    if total <= QTY_EPS:
        return None
    mean = sum(a * p for a, p in pairs) / total
    var = sum(a * (p - mean) ** 2 for a, p in pairs) / total
    return SellerStats(mean, max(var, 0.0), total)


def classify_buyers(market: MarketState, computes: Optional[dict] = None) -> dict:
    """Split buyers into winners, zero-allocation bidders and opt-outs.

    An opt-out posts nothing after at least one compute; a buyer that never
    computed and holds no bid is counted as idle.
    """
    out = {"winners": [], "zero_allocation": [], "opt_out": [], "idle": []}
    for i in market.buyer_ids():
        linked = market.sellers_linked_to(i)
        posted = sum(market.bid(i, j).quantity for j in linked)
        got = sum(market.award(i, j) for j in linked)
        if got > QTY_EPS:
            out["winners"].append(i)
        elif posted > QTY_EPS:
            out["zero_allocation"].append(i)
        elif computes is None or computes.get(i, 0) > 0:
            out["opt_out"].append(i)
        else:
            out["idle"].append(i)
    return out


# ---------------------------------------------------------------- ladder

def ladder_market(epsilon: float = 2.5) -> MarketState:
    """Two sellers (capacities 15 and 8), four buyers, fixed bids."""
    buyers = [BuyerProfile(0, 16.0, 5.0), BuyerProfile(1, 2.0, 4.0),
              BuyerProfile(2, 6.0, 1.0 / 6.0), BuyerProfile(3, 10.0, 1.0)]
    sellers = [SellerState(0, 15.0), SellerState(1, 8.0)]
    links = {(0, 0), (0, 1), (1, 0), (2, 0), (3, 0)}
    bids = {(0, 1): (8, 40), (0, 0): (8, 40), (1, 0): (2, 4), (2, 0): (6, 1)}
    return MarketState.build(buyers, sellers, links, epsilon, bids)


def ladder_experiment(config: Optional[EngineConfig] = None, market: Optional[MarketState] = None) -> dict:
    cfg = config or EngineConfig(buyer_mode="static")
    m = market if market is not None else ladder_market(cfg.epsilon)
    res = run(m, cfg)
    report = ladder_tuples(res.market)
    out = report.to_dict()
    out.update(converged=res.converged, steps=res.steps,
               clearing_prices={str(j): s.clearing_price for j, s in sorted(res.market.sellers.items())},
               reserves={str(j): s.reserve for j, s in sorted(res.market.sellers.items())})
    return out


# ---------------------------------------------------------------- market-shift scenario

APPENDIX_BIDS = {
    ("B3", "L1"): (2, 2.0), ("B4", "L1"): (2, 1.8), ("B5", "L1"): (3, 1.5),
    ("B5", "L2"): (2, 1.9), ("B4", "L2"): (4, 1.7), ("B6", "L2"): (2, 1.4),
}


def appendix_market(epsilon: float = 0.1) -> MarketState:
    buyers = [BuyerProfile("B3", 2.0, 2.0), BuyerProfile("B4", 9.0, 2.0),
              BuyerProfile("B5", 5.0, 2.0), BuyerProfile("B6", 2.0, 2.0)]
    sellers = [SellerState("L1", 6.0), SellerState("L2", 8.0)]
    return MarketState.build(buyers, sellers, set(APPENDIX_BIDS), epsilon, APPENDIX_BIDS)


def expected_round1_charges(epsilon: float) -> dict:
    return {"L1": {"B3": 1.8, "B4": 1.5, "B5": 1.5 + epsilon},
            "L2": {"B5": 1.7, "B4": 1.4, "B6": 1.4 + epsilon}}


def appendix_scenario(epsilon: float = 0.1, delta: float = 0.1) -> dict:
    """Two scripted rounds.

    Round 1 clears both sellers from the initial bids.  In round 2, B4
    overtakes B3 at L1 (price ``p_B3 + delta``, quantity enlarged by B3's
    award) and, once L1 has re-cleared, posts the coupled residual
    ``q_bar - a_L1`` to L2 at its old price.
    """
    market = appendix_market(epsilon)
    cfg = EngineConfig(buyer_mode="static", epsilon=epsilon, convergence_window=0)
    b4 = market.buyers["B4"]

    def overtake(m):
        rival = m.bid("B3", "L1")
        mine = m.bid("B4", "L1")
        return [("B4", "L1", mine.quantity + m.award("B3", "L1"), rival.unit_price + delta)]

    rebid = {}

    def coupled(m):
        target = buyer_update(b4, {"L1": m.award("B4", "L1")}, ["L2"])
        rebid.update(target)
        return [("B4", "L2", target["L2"], m.bid("B4", "L2").unit_price)]

    res = run(market, cfg, injections=[(1.0, overtake), (3.0, coupled)])

    rounds = {}
    for s in res.trace.steps:
        rounds.setdefault(str(s.seller_id), {}).setdefault(s.clear, []).append(
            {"tau": s.k, "buyer": s.buyer_id, "awarded": s.awarded, "charge": s.unit_charge,
             "ask_after": s.ask_after, "reserve_after": s.reserve_after})
    first = {j: {st["buyer"]: st["charge"] for st in rounds[j][1]} for j in ("L1", "L2")}
    want = expected_round1_charges(epsilon)
    match = all(abs(first[j].get(i, math.nan) - p) <= 1e-12 and len(first[j]) == len(want[j])
                for j in want for i, p in want[j].items())
    overtakes = [e for e in res.shifts if e.kind == BID_OVERTAKE]
    l2_clears = len(rounds.get("L2", {}))
    coupled_ok = abs(res.market.bid("B4", "L2").quantity
                     - max(b4.q_bar - res.market.award("B4", "L1"), 0.0)) <= 1e-12
    return {
        "epsilon": epsilon,
        "delta": delta,
        "steps": {j: {str(c): v for c, v in sorted(r.items())} for j, r in sorted(rounds.items())},
        "round1_charges": first,
        "expected_round1_charges": want,
        "round1_match": match,
        "shifts": [e.to_dict() for e in res.shifts],
        "overtakes": len(overtakes),
        "coupled_rebid": rebid,
        "coupled_rebid_ok": coupled_ok,
        "l2_reclears": l2_clears - 1,
        "final_awards": {f"{i}@{j}": a for (i, j), a in sorted(res.market.awards.items())},
        "converged": res.converged,
    }


# ---------------------------------------------------------------- connectivity sweep

SWEEP_COLUMNS = ("level", "replicate", "seed", "seller", "clearing_price", "reserve",
                 "expected_revenue", "revenue_variance", "total_awarded", "revenue",
                 "winners", "zero_allocation", "opt_out", "shared_fraction",
                 "converged", "steps")


def _one_run(args) -> list:
    spec, cfg, level, li, rep = args
    seed = derive_seed(spec.base_seed, li, rep)
    m = generate_market(replace(spec, connectivity_percent=level), seed)
    res = run(m, replace(cfg, epsilon=spec.epsilon, rng_seed=seed))
    classes = classify_buyers(res.market, res.computes)
    frac = shared_fraction(res.market)
    rows = []
    for j in res.market.seller_ids():
        s = res.market.sellers[j]
        st = seller_stats(res.market, j)
        rows.append({
            "level": level, "replicate": rep, "seed": seed, "seller": j,
            "clearing_price": s.clearing_price, "reserve": s.reserve,
            "expected_revenue": None if st is None else st.expected_revenue,
            "revenue_variance": None if st is None else st.revenue_variance,
            "total_awarded": 0.0 if st is None else st.total_awarded,
            "revenue": s.revenue,
            "winners": len(classes["winners"]), "zero_allocation": len(classes["zero_allocation"]),
            "opt_out": len(classes["opt_out"]), "shared_fraction": frac,
            "converged": res.converged, "steps": res.steps,
        })
    return rows


@dataclass
class SweepResult:
    rows: list
    series: list = field(default_factory=list)
    trend: Optional[dict] = None


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


def connectivity_sweep(spec: ExperimentSpec, levels: Sequence[float] = tuple(range(0, 101, 10)),
                       seeds: int = 20, config: Optional[EngineConfig] = None, jobs: int = 1) -> SweepResult:
    """Generate, run and summarize ``len(levels) * seeds`` markets.

    The price gap of a run is ``|p*_0 - p*_1|`` over its first two sellers'
    clearing prices.  ``trend`` is the Spearman correlation between level
    and the per-level mean gap, present when there are at least two levels.
    """
    cfg = config or EngineConfig()
    tasks = [(spec, cfg, lv, li, rep) for li, lv in enumerate(levels) for rep in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_one_run, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = [_one_run(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]

    series = []
    for lv in levels:
        mine = [r for r in rows if r["level"] == lv]
        gaps = []
        for rep in range(seeds):
            run_rows = sorted((r for r in mine if r["replicate"] == rep), key=lambda r: r["seller"])
            if len(run_rows) >= 2:
                gaps.append(abs(run_rows[0]["clearing_price"] - run_rows[1]["clearing_price"]))
        point = {"level": lv, "mean_gap": _mean(gaps), "shared_fraction": _mean(
            [r["shared_fraction"] for r in mine])}
        for j in sorted({r["seller"] for r in mine}):
            sr = [r for r in mine if r["seller"] == j]
            point[f"clearing_price_{j}"] = _mean([r["clearing_price"] for r in sr])
            point[f"expected_revenue_{j}"] = _mean([r["expected_revenue"] for r in sr])
        series.append(point)

    trend = None
    pts = [(p["level"], p["mean_gap"]) for p in series if p["mean_gap"] is not None]
    if len(pts) >= 2:
        rho = spearmanr([p[0] for p in pts], [p[1] for p in pts]).statistic
        trend = {"spearman": None if math.isnan(rho) else float(rho), "levels": len(pts), "seeds": seeds}
    return SweepResult(rows, series, trend)


# ---------------------------------------------------------------- oracle and surfaces

def brute_force_allocation_oracle(bids: Sequence[Bid], capacity) -> AllocationResult:
    """Exact-rational tier enumeration; awards are ``Fraction`` values."""
    if len(bids) > 5:
        raise ValueError("oracle handles at most 5 bids")
    live = [b for b in bids if b.quantity > QTY_EPS]
    left = Fraction(capacity)
    awards = {}
    for price in sorted({Fraction(b.unit_price) for b in live}, reverse=True):
        tier = [b for b in live if Fraction(b.unit_price) == price]
        want = sum(Fraction(b.quantity) for b in tier)
        if want <= left:
            for b in tier:
                awards[b.buyer_id] = Fraction(b.quantity)
            left -= want
        else:
            for b in tier:
                awards[b.buyer_id] = Fraction(b.quantity) * left / want
            left = Fraction(0)
    winners = frozenset(i for i, a in awards.items() if a > 0)
    prices = {b.buyer_id: b.unit_price for b in live}
    low = min((prices[i] for i in winners), default=None)
    high = max((prices[i] for i in awards if i not in winners), default=None)
    return AllocationResult(awards, low if low is not None else 0.0, winners, low, high)


def _linspace(lo, hi, n):
    if n <= 0:
        raise ValueError("grid resolution must be > 0")
    return [lo] if n == 1 else [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def utility_surface_export(market: MarketState, i, resolution: int = 21, two_seller: bool = False,
                           w_max: Optional[float] = None) -> list:
    """Utility over a grid, opposing bids held fixed.

    Single-seller mode returns ``(z, w, u)`` with ``u = theta(z) - z*w``.
    Two-seller mode returns ``(z0, z1, w, u)`` with ``w = theta'(z0 + z1)``
    and both quantities ranging over ``[0, q_bar/2]``.
    """
    if i not in market.buyers:
        raise KeyError(f"buyer {i!r} not in market")
    prof = market.buyers[i]
    if not two_seller:
        top = prof.p_bar if w_max is None else w_max
        return [(z, w, satiated_value(prof, z) - z * w)
                for z in _linspace(0.0, prof.q_bar, resolution)
                for w in _linspace(0.0, top, resolution)]
    half = prof.q_bar / 2.0
    out = []
    for z0 in _linspace(0.0, half, resolution):
        for z1 in _linspace(0.0, half, resolution):
            zt = min(z0 + z1, prof.q_bar)
            w = marginal_valuation(prof, zt)
            out.append((z0, z1, w, satiated_value(prof, zt) - zt * w))
    return out


def to_jsonable(obj):
    """Recursively convert dataclasses and tuples into plain JSON types."""
    if hasattr(obj, "__dataclass_fields__"):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: _id_key(str(kv[0])))}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
