"""Allocation rule and the two payment rules (GSP and VCG).

Both mechanisms share one allocation rule: sort all items by bid, assign the
k-th highest bid to slot k. They differ in payments:

* GSP charges each allocated item, per click, the highest bid among
  lower-ranked items from *other* bidders (from any bidder when the instance
  has self_pricing=True); an empty competitor set prices at zero.
* VCG charges each bidder the externality they impose: the best bid-welfare
  others could get without the bidder, minus the bid-welfare others realize
  alongside them.

Every function is pure and keeps the caller's arithmetic (exact with
Fractions, double precision with floats). Items ranked below slot K still
matter: they set GSP prices and enter VCG counterfactuals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .model import (
    Allocation,
    AuctionInstance,
    BidProfile,
    ContractViolationError,
    InvalidInputError,
    Item,
    Mechanism,
    Scalar,
    TieBreakDistribution,
    is_valid,
)

# --- tie rules for `allocate` ---------------------------------------------

FIRST_LISTED = "first_listed"


@dataclass(frozen=True)
class RandomTie:
    """Break ties by a seeded random permutation of catalog positions."""

    seed: int


@dataclass(frozen=True)
class FavorBidder:
    """Break ties in favor of one bidder, then by catalog order."""

    bidder: int


TieRule = Union[str, RandomTie, FavorBidder]


@dataclass(frozen=True)
class WelfareReport:
    """Per-bidder true value of an allocation (or distribution) plus totals."""

    per_bidder_value: tuple[Scalar, ...]
    welfare: Scalar
    bid_welfare: Scalar | None = None


@dataclass(frozen=True)
class PaymentBreakdown:
    """Payments for one allocation: per-click prices (GSP only) and totals."""

    per_bidder_payment: tuple[Scalar, ...]
    revenue: Scalar
    per_item_price: tuple[tuple[Item, Scalar], ...] | None = None


def allocate(bids: BidProfile, tie_rule: TieRule = FIRST_LISTED) -> Allocation:
    """Rank all items by non-increasing bid, resolving ties per `tie_rule`."""
    items = list(bids.items())
    index = {it: pos for pos, it in enumerate(items)}
    if tie_rule == FIRST_LISTED:
        def tiekey(it):
            return (index[it],)
    elif isinstance(tie_rule, RandomTie):
        perm = np.random.default_rng(tie_rule.seed).permutation(len(items))

        def tiekey(it):
            return (int(perm[index[it]]),)
    elif isinstance(tie_rule, FavorBidder):
        favored = tie_rule.bidder

        def tiekey(it):
            return (it[0] != favored, index[it])
    else:
        raise InvalidInputError(f"unknown tie rule {tie_rule!r}")
    ranking = sorted(items, key=lambda it: (-bids.of(it),) + tiekey(it))
    return Allocation(ranking=tuple(ranking))


def bidder_value(
    instance: AuctionInstance,
    allocation: Allocation,
    bids: BidProfile | None = None,
) -> WelfareReport:
    """True-value accounting over the top-K prefix.

    Values are weighted by slot CTR and summed per bidder; welfare is the
    total. When `bids` is given, the report also carries the bid-welfare
    (CTR-weighted sum of allocated *bids*), which the allocation rule
    maximizes over all rankings.
    """
    n = instance.num_bidders
    k_eff = min(instance.num_slots, len(allocation.ranking))
    per_bidder: list[Scalar] = [0] * n
    bid_welfare: Scalar | None = None
    for k in range(k_eff):
        i, j = allocation.ranking[k]
        per_bidder[i] = per_bidder[i] + instance.ctrs[k] * instance.values[i][j]
    if bids is not None:
        bid_welfare = 0
        for k in range(k_eff):
            bid_welfare = bid_welfare + instance.ctrs[k] * bids.of(allocation.ranking[k])
    welfare: Scalar = 0
    for v in per_bidder:
        welfare = welfare + v
    return WelfareReport(
        per_bidder_value=tuple(per_bidder), welfare=welfare, bid_welfare=bid_welfare
    )


def gsp_payments(
    instance: AuctionInstance, bids: BidProfile, allocation: Allocation
) -> PaymentBreakdown:
    """Per-item second-price payments against lower-ranked rival bids.

    The per-click price of the item at rank k is the highest bid among items
    ranked strictly below k and owned by a different bidder (any bidder when
    self_pricing is set); zero if no such item exists. The slot payment is
    CTR times that price. Items beyond rank K pay nothing.
    """
    ranking = allocation.ranking
    k_eff = min(instance.num_slots, len(ranking))
    per_bidder: list[Scalar] = [0] * instance.num_bidders
    prices: list[tuple[Item, Scalar]] = []
    for k in range(k_eff):
        i, _ = ranking[k]
        tau: Scalar = 0
        for kk in range(k + 1, len(ranking)):
            ii, _ = ranking[kk]
            if instance.self_pricing or ii != i:
                b = bids.of(ranking[kk])
                if b > tau:
                    tau = b
        prices.append((ranking[k], tau))
        per_bidder[i] = per_bidder[i] + instance.ctrs[k] * tau
    revenue: Scalar = 0
    for p in per_bidder:
        revenue = revenue + p
    return PaymentBreakdown(
        per_bidder_payment=tuple(per_bidder), revenue=revenue, per_item_price=tuple(prices)
    )


def counterfactual_optimal_bid_welfare(
    instance: AuctionInstance, bids: BidProfile, excluded_bidder: int
) -> Scalar:
    """Best achievable bid-welfare with one bidder's bids zeroed out.

    Sorting the remaining bids into the slots is optimal because bid-welfare
    is a sorted dot product with non-increasing CTRs.
    """
    if not 0 <= excluded_bidder < instance.num_bidders:
        raise InvalidInputError(f"bidder {excluded_bidder} out of range")
    rest = sorted(
        (bids.of(it) for it in bids.items() if it[0] != excluded_bidder), reverse=True
    )
    total: Scalar = 0
    for k in range(min(instance.num_slots, len(rest))):
        total = total + instance.ctrs[k] * rest[k]
    return total


def vcg_payments(
    instance: AuctionInstance, bids: BidProfile, allocation: Allocation
) -> PaymentBreakdown:
    """Externality payments: others' optimal bid-welfare minus their realized one."""
    ranking = allocation.ranking
    k_eff = min(instance.num_slots, len(ranking))
    per_bidder = []
    for i in range(instance.num_bidders):
        realized: Scalar = 0
        for k in range(k_eff):
            if ranking[k][0] != i:
                realized = realized + instance.ctrs[k] * bids.of(ranking[k])
        opt = counterfactual_optimal_bid_welfare(instance, bids, i)
        per_bidder.append(opt - realized)
    revenue: Scalar = 0
    for p in per_bidder:
        revenue = revenue + p
    return PaymentBreakdown(per_bidder_payment=tuple(per_bidder), revenue=revenue)


def payments(
    instance: AuctionInstance, bids: BidProfile, allocation: Allocation
) -> PaymentBreakdown:
    """Payment rule dispatch on the instance's mechanism flag."""
    if instance.mechanism is Mechanism.GSP:
        return gsp_payments(instance, bids, allocation)
    return vcg_payments(instance, bids, allocation)


def expected_outcome(
    instance: AuctionInstance, bids: BidProfile, pi: TieBreakDistribution
) -> tuple[WelfareReport, PaymentBreakdown]:
    """Probability-weighted welfare and payments over a tie-break distribution.

    Every supported allocation must be valid under the bids; both reports are
    linear in the distribution. Expected per-item prices are not aggregated
    (they are allocation-specific), so the breakdown's per_item_price is None.
    """
    pi.check_valid_under(bids)
    n = instance.num_bidders
    values: list[Scalar] = [0] * n
    pays: list[Scalar] = [0] * n
    bid_welfare: Scalar = 0
    for alloc, p in pi.support:
        wrep = bidder_value(instance, alloc, bids)
        prep = payments(instance, bids, alloc)
        for i in range(n):
            values[i] = values[i] + p * wrep.per_bidder_value[i]
            pays[i] = pays[i] + p * prep.per_bidder_payment[i]
        bid_welfare = bid_welfare + p * wrep.bid_welfare
    welfare: Scalar = 0
    revenue: Scalar = 0
    for i in range(n):
        welfare = welfare + values[i]
        revenue = revenue + pays[i]
    return (
        WelfareReport(per_bidder_value=tuple(values), welfare=welfare, bid_welfare=bid_welfare),
        PaymentBreakdown(per_bidder_payment=tuple(pays), revenue=revenue),
    )


OUTCOME_CSV_HEADER = "bidder_id,value,payment,mechanism"


def outcome_csv_rows(
    instance: AuctionInstance, welfare: WelfareReport, breakdown: PaymentBreakdown
) -> list[str]:
    """Flat CSV rows (one per bidder) for an outcome; header in OUTCOME_CSV_HEADER."""
    from .model import format_scalar

    rows = []
    for i in range(instance.num_bidders):
        rows.append(
            ",".join(
                [
                    instance.ids[i],
                    format_scalar(welfare.per_bidder_value[i]),
                    format_scalar(breakdown.per_bidder_payment[i]),
                    instance.mechanism.value,
                ]
            )
        )
    return rows
