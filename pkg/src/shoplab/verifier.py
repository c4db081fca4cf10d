"""Equilibrium verification and exhaustive search on tiny instances.

A candidate is a multiplier vector plus a tie-break distribution. `verify`
checks the three equilibrium conditions:

(a) every supported allocation orders items by non-increasing induced bid;
(b) each bidder's expected value covers their expected payment (up to the
    additive tolerance);
(c) any bidder with strictly positive slack is at the multiplier cap.

With Fraction-valued instances and tolerance 0 the verdict is exact.
`find_equilibria_bruteforce` scans a multiplier grid (endpoints, uniform
points, and bid-crossing ratios) and solves an exact linear feasibility
problem for tie-break weights at each grid point.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Sequence

from .mechanisms import bidder_value, payments
from .model import (
    Allocation,
    AuctionInstance,
    BidProfile,
    CombinatorialBlowupError,
    InvalidInputError,
    Scalar,
    TieBreakDistribution,
    check_multipliers,
    enumerate_valid_allocations,
    format_scalar,
    induce_bids,
    is_valid,
)

PASS = "PASS"
FAIL = "FAIL"


@dataclass(frozen=True)
class VerificationReport:
    """Per-condition outcome of an equilibrium check."""

    bid_consistent: bool
    invalid_allocations: tuple[int, ...]  # support indices failing condition (a)
    roi_slack: tuple[Scalar, ...]  # expected value minus expected payment
    roi_ok: tuple[bool, ...]
    pacing_ok: tuple[bool, ...]
    tolerance: Scalar
    alpha_tolerance: Scalar
    verdict: str
    reasons: tuple[str, ...]

    @property
    def max_violation(self) -> Scalar:
        """Largest ROI deficit across bidders (0 when condition (b) holds)."""
        worst: Scalar = 0
        for s in self.roi_slack:
            if -s > worst:
                worst = -s
        return worst


@dataclass(frozen=True)
class EquilibriumCandidate:
    """Multipliers plus tie-break distribution, with verification attached."""

    alpha: tuple[Scalar, ...]
    pi: TieBreakDistribution
    report: VerificationReport | None = None
    status: str = "UNVERIFIED"  # EXACT | CONVERGED | NON_CONVERGED | UNVERIFIED
    diagnostics: dict | None = None


def verify(
    instance: AuctionInstance,
    alpha: Sequence[Scalar],
    pi: TieBreakDistribution,
    tolerance: Scalar = 0,
    alpha_tolerance: Scalar | None = None,
) -> VerificationReport:
    """Check the three equilibrium conditions for (alpha, pi).

    Condition (c) triggers when slack exceeds `tolerance`; it then requires
    the multiplier to sit within `alpha_tolerance` (default: `tolerance`) of
    the cap. Exact zero slack never triggers it.
    """
    alpha = check_multipliers(instance, alpha)
    if alpha_tolerance is None:
        alpha_tolerance = tolerance
    bids = induce_bids(instance, alpha)
    n = instance.num_bidders

    invalid = []
    values: list[Scalar] = [0] * n
    pays: list[Scalar] = [0] * n
    for idx, (alloc, p) in enumerate(pi.support):
        if not is_valid(alloc, bids):
            invalid.append(idx)
        wrep = bidder_value(instance, alloc)
        prep = payments(instance, bids, alloc)
        for i in range(n):
            values[i] = values[i] + p * wrep.per_bidder_value[i]
            pays[i] = pays[i] + p * prep.per_bidder_payment[i]

    slack = tuple(values[i] - pays[i] for i in range(n))
    roi_ok = tuple(s >= -tolerance for s in slack)
    pacing_ok = tuple(
        not (s > tolerance) or (instance.cap - alpha[i]) <= alpha_tolerance
        for i, s in enumerate(slack)
    )
    reasons = []
    if invalid:
        reasons.append(f"allocations {invalid} not ordered by bid")
    for i in range(n):
        if not roi_ok[i]:
            reasons.append(f"bidder {i} pays more than their value (slack {slack[i]})")
        if not pacing_ok[i]:
            reasons.append(
                f"bidder {i} has positive slack {slack[i]} but multiplier "
                f"{alpha[i]} below cap {instance.cap}"
            )
    verdict = PASS if not reasons else FAIL
    return VerificationReport(
        bid_consistent=not invalid,
        invalid_allocations=tuple(invalid),
        roi_slack=slack,
        roi_ok=roi_ok,
        pacing_ok=pacing_ok,
        tolerance=tolerance,
        alpha_tolerance=alpha_tolerance,
        verdict=verdict,
        reasons=tuple(reasons),
    )


# ---------------------------------------------------------------------------
# Exact linear feasibility (phase-one simplex over Fractions, Bland's rule)
# ---------------------------------------------------------------------------


def _solve_feasibility(rows: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction] | None:
    """Find x >= 0 with rows @ x = rhs, exactly; None if infeasible."""
    m = len(rows)
    if m == 0:
        return []
    n = len(rows[0])
    tab = []
    b = []
    for r in range(m):
        row = list(rows[r])
        rb = rhs[r]
        if rb < 0:
            row = [-x for x in row]
            rb = -rb
        tab.append(row + [Fraction(0)] * m)
        tab[r][n + r] = Fraction(1)  # artificial variable
        b.append(rb)
    basis = [n + r for r in range(m)]
    # objective: minimize the sum of artificials; price out the initial basis
    cost = [Fraction(0)] * n + [Fraction(1)] * m
    for r in range(m):
        for c in range(n + m):
            cost[c] -= tab[r][c]
    obj = -sum(b, Fraction(0))  # negated objective value, feasible iff it reaches 0

    while True:
        enter = -1
        for c in range(n + m):  # Bland: smallest negative-reduced-cost index
            if cost[c] < 0:
                enter = c
                break
        if enter < 0:
            break
        leave = -1
        best = None
        for r in range(m):
            if tab[r][enter] > 0:
                ratio = b[r] / tab[r][enter]
                if best is None or ratio < best or (ratio == best and basis[r] < basis[leave]):
                    best = ratio
                    leave = r
        if leave < 0:
            break  # unbounded; cannot happen for phase one but stay safe
        piv = tab[leave][enter]
        tab[leave] = [x / piv for x in tab[leave]]
        b[leave] = b[leave] / piv
        for r in range(m):
            if r != leave and tab[r][enter] != 0:
                f = tab[r][enter]
                tab[r] = [x - f * y for x, y in zip(tab[r], tab[leave])]
                b[r] = b[r] - f * b[leave]
        if cost[enter] != 0:
            f = cost[enter]
            cost = [x - f * y for x, y in zip(cost, tab[leave])]
            obj = obj - f * b[leave]
        basis[leave] = enter

    if obj != 0:
        return None
    x = [Fraction(0)] * n
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = b[r]
        elif b[r] != 0:
            return None  # artificial stuck in basis at a nonzero level
    return x


def find_equilibria_bruteforce(
    instance: AuctionInstance,
    alpha_grid_resolution: int = 7,
    limit: int = 5000,
) -> list[EquilibriumCandidate]:
    """Exhaustive equilibrium search on tiny (<= 2 bidder) instances.

    Scans a multiplier grid per bidder built from the endpoints {1, cap}, a
    uniform grid, and every bid-crossing ratio against the other bidder's
    grid values (allocations change exactly at those ratios). At each grid
    point the valid allocations are enumerated and an exact feasibility
    problem decides whether tie-break weights exist meeting the equilibrium
    conditions: zero slack for bidders below the cap, non-negative slack at
    the cap. Returns every grid point that admits such weights; an empty
    list means the scan was inconclusive at this resolution, never that no
    equilibrium exists.
    """
    n = instance.num_bidders
    if n > 2:
        raise InvalidInputError("brute-force search supports at most 2 bidders")
    if alpha_grid_resolution < 2:
        raise InvalidInputError("grid resolution must be >= 2")
    cap = Fraction(instance.cap) if not isinstance(instance.cap, float) else instance.cap

    def base_axis() -> list[Scalar]:
        pts = {Fraction(1), Fraction(cap)} if not isinstance(cap, float) else {1.0, cap}
        r = alpha_grid_resolution
        for t in range(r):
            if isinstance(cap, float):
                pts.add(1.0 + (cap - 1.0) * t / (r - 1))
            else:
                pts.add(Fraction(1) + (Fraction(cap) - 1) * Fraction(t, r - 1))
        return sorted(pts)

    axes = [base_axis() for _ in range(n)]
    if n == 2:
        # refine each axis with the crossing ratios alpha_i = gamma * v_other / v_own
        refined = [set(a) for a in axes]
        for i in range(2):
            other = 1 - i
            for v_own in instance.values[i]:
                if v_own == 0:
                    continue
                for v_oth in instance.values[other]:
                    for gamma in axes[other]:
                        x = gamma * v_oth / v_own
                        if 1 <= x <= cap:
                            refined[i].add(x)
        axes = [sorted(s) for s in refined]

    out: list[EquilibriumCandidate] = []
    for alpha in itertools.product(*axes):
        bids = induce_bids(instance, alpha)
        allocations = enumerate_valid_allocations(bids, limit=limit)
        candidate_pi = _feasible_tie_break(instance, bids, alpha, allocations)
        if candidate_pi is None:
            continue
        report = verify(instance, alpha, candidate_pi, tolerance=0)
        if report.verdict == PASS:
            out.append(
                EquilibriumCandidate(
                    alpha=tuple(alpha), pi=candidate_pi, report=report, status="EXACT"
                )
            )
    return out


# ---------------------------------------------------------------------------
# Candidate / report serialization (see docs/schemas.md)
# ---------------------------------------------------------------------------


def report_to_dict(report: VerificationReport) -> dict:
    return {
        "verdict": report.verdict,
        "bid_consistent": report.bid_consistent,
        "invalid_allocations": list(report.invalid_allocations),
        "roi_slack": [format_scalar(s) for s in report.roi_slack],
        "roi_ok": list(report.roi_ok),
        "pacing_ok": list(report.pacing_ok),
        "tolerance": format_scalar(report.tolerance),
        "alpha_tolerance": format_scalar(report.alpha_tolerance),
        "reasons": list(report.reasons),
    }


def dumps_candidate(candidate: EquilibriumCandidate) -> str:
    """Canonical candidate file body (alpha, status, tie-break support, report)."""
    lines = ["{"]
    alphas = ", ".join(format_scalar(a) for a in candidate.alpha)
    lines.append(f'  "alpha": [{alphas}],')
    lines.append(f'  "status": {json.dumps(candidate.status)},')
    rows = []
    for alloc, p in sorted(candidate.pi.support, key=lambda ap: ap[0].ranking):
        ranking = ", ".join(f"[{i}, {j}]" for i, j in alloc.ranking)
        rows.append(f'    {{"ranking": [{ranking}], "prob": {format_scalar(p)}}}')
    lines.append('  "pi": [')
    lines.append(",\n".join(rows))
    lines.append("  ],")
    if candidate.report is not None:
        lines.append(f'  "report": {json.dumps(report_to_dict(candidate.report), sort_keys=True)}')
    else:
        lines.append('  "report": null')
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_candidate(text: str, arith: str = "rational") -> tuple[tuple, TieBreakDistribution]:
    """Read (alpha, pi) from a candidate file body; the report is not restored."""
    if arith == "rational":
        def num(tok):
            f = Fraction(Decimal(tok))
            return int(f) if f.denominator == 1 else f

        obj = json.loads(text, parse_float=num, parse_int=num)
    else:
        obj = json.loads(text, parse_int=float)
    try:
        alpha = tuple(obj["alpha"])
        support = tuple(
            (
                Allocation(ranking=tuple((int(i), int(j)) for i, j in row["ranking"])),
                row["prob"],
            )
            for row in obj["pi"]
        )
    except (KeyError, TypeError):
        raise InvalidInputError("candidate file needs 'alpha' and 'pi'") from None
    return alpha, TieBreakDistribution(support=support)


def _feasible_tie_break(
    instance: AuctionInstance,
    bids: BidProfile,
    alpha: Sequence[Scalar],
    allocations: list[Allocation],
) -> TieBreakDistribution | None:
    """Tie-break weights meeting the equilibrium conditions at fixed alpha, or None."""
    n = instance.num_bidders
    at_cap = [alpha[i] >= instance.cap for i in range(n)]

    # slack vector per allocation; merge allocations with identical vectors
    columns: list[tuple[Fraction, ...]] = []
    reps: list[Allocation] = []
    seen: dict[tuple, int] = {}
    for alloc in allocations:
        wrep = bidder_value(instance, alloc)
        prep = payments(instance, bids, alloc)
        s = tuple(
            Fraction(wrep.per_bidder_value[i]) - Fraction(prep.per_bidder_payment[i])
            for i in range(n)
        )
        if s not in seen:
            seen[s] = len(columns)
            columns.append(s)
            reps.append(alloc)

    # quick necessary check: each equality bidder needs 0 in the column hull
    for i in range(n):
        if not at_cap[i]:
            lo = min(c[i] for c in columns)
            hi = max(c[i] for c in columns)
            if lo > 0 or hi < 0:
                return None

    ncols = len(columns)
    # variables: pi_1..pi_ncols, then one surplus per capped bidder
    capped = [i for i in range(n) if at_cap[i]]
    nvars = ncols + len(capped)
    rows = [[Fraction(1)] * ncols + [Fraction(0)] * len(capped)]
    rhs = [Fraction(1)]
    for i in range(n):
        row = [Fraction(c[i]) for c in columns] + [Fraction(0)] * len(capped)
        if at_cap[i]:
            row[ncols + capped.index(i)] = Fraction(-1)  # slack_i - t_i = 0, t_i >= 0
        rows.append(row)
        rhs.append(Fraction(0))
    x = _solve_feasibility(rows, rhs)
    if x is None:
        return None
    support = tuple(
        (reps[c], x[c]) for c in range(ncols) if x[c] > 0
    )
    if not support:
        return None
    return TieBreakDistribution(support=support)
