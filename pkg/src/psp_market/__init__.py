"""Decentralized multi-seller PSP auction simulator and analysis toolkit."""

__version__ = "0.1.0"

from .engine import EngineConfig, RunResult, TauTrace, run
from .harness import (ExperimentSpec, SellerStats, appendix_scenario, brute_force_allocation_oracle,
                      connectivity_sweep, generate_market, ladder_experiment, seller_stats,
                      utility_surface_export)
from .influence import (check_local_monotonicity, component_closure, detect_market_shift,
                        is_saturated, ladder_tuples, lambda_n, lambda_primary)
from .market_core import (Bid, ConfigurationError, SellerBook, allocate, clearing_price,
                          exclusion_cost, margins, opponent_staircase, update_reserve)
from .state import MarketState, SellerState
from .strategy import (BuyerProfile, buyer_update, joint_best_response, marginal_valuation,
                       regime_classify, select_sellers, valuation)
