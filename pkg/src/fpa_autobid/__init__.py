"""Simultaneous first-price auctions with autobidding agents.

Auction mechanics, equilibrium verification, smoothness-based price of
anarchy bounds, lower-bound constructions and learning dynamics.
"""

from .special_math import (RealTolerance, beta_threshold, lambert_w0, lambert_w0_derivative,
                           theta_threshold)
from .auction_core import (XOS, Additive, BudgetCapped, Instance, Outcome, TieBreakRule, AuctionTieRule, TypeSet,
                           budget_cap, eta_gaps, evaluate, liquid_welfare, make_instance, normalize_targets,
                           opt_representatives, optimal_allocation, proxy_instance, rightful_winners, run_auctions)
from .bid_profiles import (CoupledProfile, FiniteProfile, ParametricBid, ProductProfile, expected_outcome_stats,
                           marginal_excluding, sample)
from .equilibrium import (DeviationSet, EquilibriumReport, best_response_dynamics, check_feasible,
                          expected_gain_deviation, gain, lw_lower_bound_check, verify_ce_finite, verify_cce,
                          verify_mne, well_supported)
from .smoothness_rmp import (bound_min_type, bound_P, bound_Pt_eta, bound_Q_common, bound_Q_eta,
                             calibration_feasible, deviation_type_t, deviation_type_zero, gamma, mu_star,
                             poa_rmp_lower_bound, poa_upper_bound, rmp_objective, smoothness_check, zeta)

__version__ = "0.1.0"
