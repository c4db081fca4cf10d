"""shoplab: a laboratory for multi-item position auctions with autobidders.

Bidders own catalogs of items and bid a single multiplier times each item's
value; the auction ranks all items by bid into CTR-weighted slots and charges
either generalized second prices (against lower-ranked rival bids) or VCG
externalities. The package computes payments exactly (feed Fractions),
searches for autobidding equilibria with a smoothed fixed-point solver,
verifies equilibrium conditions, and measures welfare ratios against the
optimal allocation.
"""

from .gen import example1_instance, random_instance, random_multipliers
from .mechanisms import (
    FIRST_LISTED,
    FavorBidder,
    PaymentBreakdown,
    RandomTie,
    WelfareReport,
    allocate,
    bidder_value,
    counterfactual_optimal_bid_welfare,
    expected_outcome,
    gsp_payments,
    payments,
    vcg_payments,
)
from .model import (
    Allocation,
    AuctionInstance,
    BidProfile,
    CombinatorialBlowupError,
    ContractViolationError,
    InvalidInputError,
    Mechanism,
    TieBreakDistribution,
    enumerate_valid_allocations,
    induce_bids,
    is_valid,
    load_instance,
    parse_instance,
    prefix_set,
    save_instance,
)
from .poa import (
    PoaReport,
    check_disjoint_ownership,
    check_revenue_lower_bound,
    check_vcg_replacement_identity,
    construct_a_opt,
    gen_tightness_instance,
    layered_welfare,
    optimal_welfare,
    poa_report,
)
from .solver import (
    CONVERGED,
    NON_CONVERGED,
    SmoothedEstimate,
    SolverConfig,
    estimate_smoothed,
    fixed_point_step,
    sample_perturbed_round,
    solve,
)
from .verifier import (
    EquilibriumCandidate,
    VerificationReport,
    find_equilibria_bruteforce,
    verify,
)

__all__ = [
    "Allocation",
    "AuctionInstance",
    "BidProfile",
    "CombinatorialBlowupError",
    "ContractViolationError",
    "CONVERGED",
    "EquilibriumCandidate",
    "FIRST_LISTED",
    "FavorBidder",
    "InvalidInputError",
    "Mechanism",
    "NON_CONVERGED",
    "PaymentBreakdown",
    "PoaReport",
    "RandomTie",
    "SmoothedEstimate",
    "SolverConfig",
    "TieBreakDistribution",
    "VerificationReport",
    "WelfareReport",
    "allocate",
    "bidder_value",
    "check_disjoint_ownership",
    "check_revenue_lower_bound",
    "check_vcg_replacement_identity",
    "construct_a_opt",
    "counterfactual_optimal_bid_welfare",
    "enumerate_valid_allocations",
    "estimate_smoothed",
    "example1_instance",
    "expected_outcome",
    "find_equilibria_bruteforce",
    "fixed_point_step",
    "gen_tightness_instance",
    "gsp_payments",
    "induce_bids",
    "is_valid",
    "layered_welfare",
    "load_instance",
    "optimal_welfare",
    "parse_instance",
    "payments",
    "poa_report",
    "prefix_set",
    "random_instance",
    "random_multipliers",
    "sample_perturbed_round",
    "save_instance",
    "solve",
    "vcg_payments",
    "verify",
]

__version__ = "0.1.0"
