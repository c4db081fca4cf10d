"""Price-of-anarchy machinery: optimal welfare, structural revenue bounds,
and the two-bidder family of instances on which the welfare ratio tends to 2.

The structural checks mirror how equilibrium revenue covers displaced value:

* `construct_a_opt` builds the value-optimal ranking whose ties follow a
  reference allocation, so displaced items and displacing items never share
  an owner (`check_disjoint_ownership`).
* `check_revenue_lower_bound` verifies that revenue covers the layered value
  of displaced optimal items, with the stronger per-layer cumulative-price
  form checked separately for GSP.
* `check_vcg_replacement_identity` re-derives VCG payments layer by layer
  from replacement items and confirms the layered total matches the direct
  externality computation exactly.

Layer weights are ctr[k] - ctr[k+1] with a zero sentinel after the last slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .mechanisms import (
    FIRST_LISTED,
    FavorBidder,
    PaymentBreakdown,
    WelfareReport,
    allocate,
    bidder_value,
    gsp_payments,
    payments,
    vcg_payments,
)
from .model import (
    Allocation,
    AuctionInstance,
    BidProfile,
    InvalidInputError,
    Item,
    Mechanism,
    Scalar,
    induce_bids,
    prefix_set,
)


def layer_weights(instance: AuctionInstance) -> list[Scalar]:
    """Differences ctr[k] - ctr[k+1] for k = 1..K, with ctr[K+1] = 0."""
    ctrs = list(instance.ctrs)
    out = []
    for k in range(len(ctrs)):
        nxt = ctrs[k + 1] if k + 1 < len(ctrs) else 0
        out.append(ctrs[k] - nxt)
    return out


def layered_welfare(instance: AuctionInstance, allocation: Allocation) -> Scalar:
    """Welfare rewritten as layered prefix sums; equals bidder_value().welfare."""
    weights = layer_weights(instance)
    total: Scalar = 0
    running: Scalar = 0
    for k in range(min(instance.num_slots, len(allocation.ranking))):
        running = running + instance.value(allocation.ranking[k])
        total = total + weights[k] * running
    # slots beyond the item count stay empty and contribute ctr[k]*0
    if instance.num_slots > len(allocation.ranking):
        for k in range(len(allocation.ranking), instance.num_slots):
            total = total + weights[k] * running
    return total


def optimal_welfare(instance: AuctionInstance) -> tuple[Scalar, Allocation]:
    """Maximum social welfare over all rankings, with a witnessing allocation.

    Sorting items by true value is optimal since welfare is a sorted dot
    product with non-increasing CTRs.
    """
    items = sorted(instance.items(), key=lambda it: (-instance.value(it),) + it)
    alloc = Allocation(ranking=tuple(items))
    total: Scalar = 0
    for k in range(min(instance.num_slots, len(items))):
        total = total + instance.ctrs[k] * instance.value(items[k])
    return total, alloc


def construct_a_opt(instance: AuctionInstance, reference: Allocation) -> Allocation:
    """Value-optimal ranking whose value ties follow the reference order.

    Breaking value ties by the reference allocation's order is what keeps the
    owners of displaced and displacing items disjoint at every prefix.
    """
    pos = {it: k for k, it in enumerate(reference.ranking)}
    if len(pos) != instance.num_items:
        raise InvalidInputError("reference must be a full ranking of the items")
    items = sorted(instance.items(), key=lambda it: (-instance.value(it), pos[it]))
    return Allocation(ranking=tuple(items))


def check_disjoint_ownership(
    instance: AuctionInstance, a: Allocation, a_opt: Allocation, k: int
) -> tuple[bool, tuple[int, Item, Item] | None]:
    """No bidder may own items both displaced from and displacing the top-k.

    Compares M_k = top-k(a) \\ top-k(a_opt) against O_k = top-k(a_opt) \\
    top-k(a). Returns (True, None) or (False, (bidder, item_in_M, item_in_O)).
    """
    s_a = prefix_set(a, min(k, len(a.ranking)))
    s_o = prefix_set(a_opt, min(k, len(a_opt.ranking)))
    m_k = s_a - s_o
    o_k = s_o - s_a
    owners_m = {it[0]: it for it in m_k}
    for it in o_k:
        if it[0] in owners_m:
            return False, (it[0], owners_m[it[0]], it)
    return True, None


@dataclass(frozen=True)
class RevenueBoundResult:
    """Outcome of the layered revenue lower bound for one allocation."""

    ok: bool | None  # None when the bids >= values precondition failed
    revenue: Scalar
    displaced_value: Scalar  # layered value of optimal items missing from a
    per_k: tuple[tuple[int, Scalar, Scalar], ...]  # (k, cumulative prices, displaced value)
    gsp_per_k_ok: bool | None  # stronger per-layer price bound, GSP only
    diagnostic: str = ""


def check_revenue_lower_bound(
    instance: AuctionInstance, bids: BidProfile, a: Allocation
) -> RevenueBoundResult:
    """Revenue covers the layered value of displaced optimal items.

    Requires every bid to be at least the item's true value (bids induced by
    multipliers >= 1 satisfy this structurally); otherwise the check is
    skipped with a diagnostic. For GSP the per-layer form -- cumulative
    per-click prices of the top k slots cover the displaced value at k -- is
    evaluated as well and reported separately.
    """
    for it in bids.items():
        if bids.of(it) < instance.value(it):
            return RevenueBoundResult(
                ok=None,
                revenue=0,
                displaced_value=0,
                per_k=(),
                gsp_per_k_ok=None,
                diagnostic=f"bid below value for item {it}; bound not applicable",
            )
    a_opt = construct_a_opt(instance, a)
    weights = layer_weights(instance)
    breakdown = payments(instance, bids, a)
    revenue = breakdown.revenue

    k_max = instance.num_slots
    displaced: Scalar = 0
    per_k = []
    gsp_ok: bool | None = None
    cumulative_tau: Scalar = 0
    taus = dict(gsp_payments(instance, bids, a).per_item_price or ())
    if instance.mechanism is Mechanism.GSP:
        gsp_ok = True
    for k in range(1, k_max + 1):
        s_a = prefix_set(a, min(k, len(a.ranking)))
        s_o = prefix_set(a_opt, min(k, len(a_opt.ranking)))
        o_k_value: Scalar = 0
        for it in s_o - s_a:
            o_k_value = o_k_value + instance.value(it)
        displaced = displaced + weights[k - 1] * o_k_value
        if k <= len(a.ranking):
            cumulative_tau = cumulative_tau + taus.get(a.ranking[k - 1], 0)
        per_k.append((k, cumulative_tau, o_k_value))
        if gsp_ok is not None and cumulative_tau < o_k_value:
            gsp_ok = False
    return RevenueBoundResult(
        ok=revenue >= displaced,
        revenue=revenue,
        displaced_value=displaced,
        per_k=tuple(per_k),
        gsp_per_k_ok=gsp_ok,
    )


@dataclass(frozen=True)
class VcgDecompositionResult:
    """Layered replacement-item decomposition of VCG payments."""

    decomposition_ok: bool  # layered totals equal the direct payments
    claim_ok: bool  # per-layer replacement bids cover displaced optimal bids
    per_bidder_layered: tuple[Scalar, ...]
    per_k: tuple[tuple[int, Scalar, Scalar], ...]  # (k, replacement bids, displaced bids)


def check_vcg_replacement_identity(
    instance: AuctionInstance, bids: BidProfile, a: Allocation
) -> VcgDecompositionResult:
    """Rebuild VCG payments from replacement items, layer by layer.

    For each bidder i, rank the other bidders' items by bid (ties following
    a's order); the items entering the top-k once i is removed are the
    replacement set R_k(i), and the payment decomposes as
    sum_k (ctr[k]-ctr[k+1]) * sum(R_k(i) bids). The per-layer claim checked
    alongside: summed over bidders, replacement bids cover the bids of
    optimal items displaced from a's top-k.
    """
    n = instance.num_bidders
    weights = layer_weights(instance)
    k_max = instance.num_slots
    direct = vcg_payments(instance, bids, a)
    a_opt = construct_a_opt(instance, a)
    pos = {it: r for r, it in enumerate(a.ranking)}

    # others-only rankings, tie-consistent with a so prefixes nest
    others_ranking = []
    for i in range(n):
        rest = [it for it in a.ranking if it[0] != i]
        rest.sort(key=lambda it: (-bids.of(it), pos[it]))
        others_ranking.append(rest)

    layered = [0] * n
    replacement_by_k: list[Scalar] = [0] * (k_max + 1)
    for i in range(n):
        for k in range(1, k_max + 1):
            s_a = prefix_set(a, min(k, len(a.ranking)))
            s_minus = frozenset(others_ranking[i][: min(k, len(others_ranking[i]))])
            r_k: Scalar = 0
            for it in s_minus - s_a:
                r_k = r_k + bids.of(it)
            layered[i] = layered[i] + weights[k - 1] * r_k
            replacement_by_k[k] = replacement_by_k[k] + r_k

    decomposition_ok = all(
        layered[i] == direct.per_bidder_payment[i] for i in range(n)
    )
    claim_ok = True
    per_k = []
    for k in range(1, k_max + 1):
        s_a = prefix_set(a, min(k, len(a.ranking)))
        s_o = prefix_set(a_opt, min(k, len(a_opt.ranking)))
        displaced_bids: Scalar = 0
        for it in s_o - s_a:
            displaced_bids = displaced_bids + bids.of(it)
        per_k.append((k, replacement_by_k[k], displaced_bids))
        if replacement_by_k[k] < displaced_bids:
            claim_ok = False
    return VcgDecompositionResult(
        decomposition_ok=decomposition_ok,
        claim_ok=claim_ok,
        per_bidder_layered=tuple(layered),
        per_k=tuple(per_k),
    )


@dataclass(frozen=True)
class PoaReport:
    """Welfare ratio of a verified equilibrium candidate against the optimum."""

    wel_opt: Scalar
    wel_eq: Scalar
    rev_eq: Scalar
    ratio: Scalar  # wel_opt / wel_eq; inf when wel_eq = 0 < wel_opt
    degenerate: bool  # ratio reported as inf
    smoothness_ok: tuple[bool, ...]  # per supported allocation: Wel(a)+Rev(a) >= Wel_opt
    welfare_covers_revenue: bool  # Wel(pi) >= Rev(pi) - tol
    bound_ok: bool  # 2*Wel(pi) >= Wel_opt - tol


def poa_report(instance: AuctionInstance, candidate, tol: Scalar = 0) -> PoaReport:
    """Welfare/revenue accounting for a PASS-verified equilibrium candidate.

    Refuses candidates without a passing verification report: the welfare
    guarantees only hold at equilibrium.
    """
    report = getattr(candidate, "report", None)
    if report is None or report.verdict != "PASS":
        raise InvalidInputError("candidate must carry a PASS verification report")
    from .mechanisms import expected_outcome  # local import to avoid cycle noise

    bids = induce_bids(instance, candidate.alpha)
    wel_opt, _ = optimal_welfare(instance)
    wrep, prep = expected_outcome(instance, bids, candidate.pi)
    wel_eq = wrep.welfare
    rev_eq = prep.revenue
    smooth = []
    for alloc, _ in candidate.pi.support:
        w = bidder_value(instance, alloc).welfare
        r = payments(instance, bids, alloc).revenue
        smooth.append(w + r >= wel_opt - tol)
    if wel_eq == 0 and wel_opt > 0:
        ratio: Scalar = math.inf
        degenerate = True
    elif wel_opt == 0 and wel_eq == 0:
        ratio = 1
        degenerate = False
    else:
        if isinstance(wel_opt, Fraction) or isinstance(wel_eq, Fraction):
            ratio = Fraction(wel_opt) / Fraction(wel_eq)
        else:
            ratio = wel_opt / wel_eq
        degenerate = False
    return PoaReport(
        wel_opt=wel_opt,
        wel_eq=wel_eq,
        rev_eq=rev_eq,
        ratio=ratio,
        degenerate=degenerate,
        smoothness_ok=tuple(smooth),
        welfare_covers_revenue=wel_eq >= rev_eq - tol,
        bound_ok=2 * wel_eq >= wel_opt - tol,
    )


def gen_tightness_instance(
    K: int, eps_prime: Scalar, mechanism: Mechanism = Mechanism.GSP
) -> tuple[AuctionInstance, tuple[Scalar, ...], Allocation]:
    """Two-bidder family whose equilibrium welfare ratio approaches 2.

    Bidder 0 has one item of value K and K-1 filler items of value eps_prime;
    bidder 1 has K unit-value items; all K slots have unit CTR. With
    multipliers (1/eps_prime, 1) and ties favoring bidder 0, bidder 0 takes
    every slot, pays K, and keeps welfare K + (K-1)*eps_prime against an
    optimum of 2K - 1. The cap equals 1/eps_prime so the slack bidder is
    maximally paced, which the equilibrium conditions require.
    """
    if K < 2:
        raise InvalidInputError("K must be >= 2")
    if not (0 < eps_prime < 1):
        raise InvalidInputError("eps_prime must lie in (0, 1)")
    if isinstance(eps_prime, Fraction) or isinstance(eps_prime, int):
        inv = Fraction(1) / Fraction(eps_prime)
    else:
        inv = 1.0 / eps_prime
    instance = AuctionInstance(
        values=((K,) + (eps_prime,) * (K - 1), (1,) * K),
        ctrs=(1,) * K,
        cap=inv,
        mechanism=mechanism,
        bidder_ids=("bidder1", "bidder2"),
    )
    alpha = (inv, 1)
    alloc = allocate(induce_bids(instance, alpha), FavorBidder(0))
    return instance, alpha, alloc


POA_CSV_HEADER = (
    "seed,n,m,K,mechanism,wel_opt,wel_eq,rev_eq,ratio,smoothness_ok,ownership_ok"
)
