"""Smoothed fixed-point solver for autobidding equilibria.

Each bidder's multiplier is driven by the truncated map
``alpha -> clip(alpha + (value - payment), 1, cap)`` evaluated on a smoothed
auction: every item's bid is perturbed by independent uniform noise on
[0, eps], which makes the allocation almost surely unique and the expected
value/payment continuous in the multipliers. The solver anneals eps toward
zero over stages, iterating a damped version of the map at each stage with a
fixed noise panel (common random numbers), then extracts the empirical
allocation distribution at the final stage as the tie-breaking rule.

Iterating the map has no convergence guarantee, so the solver runs several
restarts and reports NON_CONVERGED honestly whenever the best candidate
either misses the residual tolerance or fails verification at a tolerance of
three standard errors plus the residual tolerance.

Reproducibility: noise panels are assembled from fixed-size chunks whose
substreams are keyed by (seed, restart, stage, chunk index), so results are
byte-identical for any worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .mechanisms import (
    FIRST_LISTED,
    PaymentBreakdown,
    WelfareReport,
    allocate,
    bidder_value,
    payments,
)
from .model import (
    Allocation,
    AuctionInstance,
    BidProfile,
    InvalidInputError,
    Scalar,
    TieBreakDistribution,
    check_multipliers,
    induce_bids,
    is_valid,
)
from .verifier import PASS, EquilibriumCandidate, _feasible_tie_break, verify

CONVERGED = "CONVERGED"
NON_CONVERGED = "NON_CONVERGED"

_CHUNK = 256  # noise panel chunk size; fixed so draws never depend on workers


@dataclass(frozen=True)
class SolverConfig:
    """Annealing and iteration knobs. eps0/fp_tol default to multiples of the
    largest value in the instance (0.1 and 1e-4) when left as None.
    init_alpha replaces the all-ones anchor of the first restart."""

    eps0: float | None = None
    eps_decay: float = 0.5
    stages: int = 12
    samples_per_eval: int = 2048
    damping: float = 0.2
    max_iters_per_stage: int = 500
    fp_tol: float | None = None
    restarts: int = 4
    seed: int = 0
    workers: int = 1
    init_alpha: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.init_alpha is not None:
            object.__setattr__(self, "init_alpha", tuple(float(a) for a in self.init_alpha))
        if self.eps0 is not None and self.eps0 <= 0:
            raise InvalidInputError("eps0 must be positive")
        if not 0 < self.eps_decay < 1:
            raise InvalidInputError("eps_decay must lie in (0, 1)")
        if self.stages < 1 or self.samples_per_eval < 1 or self.restarts < 1:
            raise InvalidInputError("stages, samples_per_eval, restarts must be >= 1")
        if not 0 < self.damping <= 1:
            raise InvalidInputError("damping must lie in (0, 1]")
        if self.max_iters_per_stage < 1:
            raise InvalidInputError("max_iters_per_stage must be >= 1")
        if self.fp_tol is not None and self.fp_tol <= 0:
            raise InvalidInputError("fp_tol must be positive")
        if self.seed < 0:
            raise InvalidInputError("seed must be non-negative")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")

    @classmethod
    def from_json(cls, text: str) -> "SolverConfig":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise InvalidInputError("solver config file must hold an object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInputError(f"unknown solver config fields {sorted(unknown)}")
        return cls(**obj)

    def with_overrides(self, **kwargs) -> "SolverConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


@dataclass(frozen=True)
class SmoothedEstimate:
    """Monte-Carlo estimate of per-bidder expected value and payment."""

    value_est: np.ndarray
    payment_est: np.ndarray
    value_std_err: np.ndarray
    payment_std_err: np.ndarray
    slack_std_err: np.ndarray  # standard error of value minus payment
    draws: int


class _FloatView:
    """Flat float64 arrays for one instance, shared by the batch kernel."""

    def __init__(self, instance: AuctionInstance):
        fl = instance.as_float()
        self.instance = fl
        self.items: list = list(fl.items())
        self.owner = np.array([i for i, _ in self.items], dtype=np.intp)
        self.v_flat = np.array([fl.value(it) for it in self.items], dtype=np.float64)
        self.nm = len(self.items)
        self.n = fl.num_bidders
        self.k_eff = min(fl.num_slots, self.nm)
        self.ctrs = np.array(fl.ctrs, dtype=np.float64)
        self.cap = float(fl.cap)
        self.self_pricing = fl.self_pricing
        self.mechanism = fl.mechanism
        mv = max(self.v_flat.max(initial=0.0), 0.0)
        self.scale = mv if mv > 0 else 1.0

    def bids0(self, alpha: np.ndarray) -> np.ndarray:
        return alpha[self.owner] * self.v_flat


def _batch_outcomes(view: _FloatView, alpha: np.ndarray, xi: np.ndarray):
    """Allocation orders plus per-bidder values and payments for a noise panel.

    Accumulation runs slot by slot in ascending rank so each sample's totals
    are bit-identical to the scalar mechanism functions applied to the same
    perturbed bids.
    """
    s = xi.shape[0]
    perturbed = view.bids0(alpha)[None, :] + xi
    order = np.argsort(-perturbed, axis=1, kind="stable")
    bs = np.take_along_axis(perturbed, order, axis=1)
    owner_s = view.owner[order]
    v_sorted = view.v_flat[order]
    k_eff = view.k_eff

    values = np.zeros((s, view.n))
    for k in range(k_eff):
        term = view.ctrs[k] * v_sorted[:, k]
        for i in range(view.n):
            values[:, i] += np.where(owner_s[:, k] == i, term, 0.0)

    pays = np.zeros((s, view.n))
    if view.mechanism.value == "gsp":
        sentinel = np.full((s, 1), -1.0)
        if view.self_pricing:
            suff = np.maximum.accumulate(bs[:, ::-1], axis=1)[:, ::-1]
            suff = np.concatenate([suff, sentinel], axis=1)
            for k in range(k_eff):
                tau = np.maximum(suff[:, k + 1], 0.0)
                term = view.ctrs[k] * tau
                for i in range(view.n):
                    pays[:, i] += np.where(owner_s[:, k] == i, term, 0.0)
        else:
            suffs = []
            for o in range(view.n):
                masked = np.where(owner_s != o, bs, -1.0)
                acc = np.maximum.accumulate(masked[:, ::-1], axis=1)[:, ::-1]
                suffs.append(np.concatenate([acc, sentinel], axis=1))
            suffs = np.stack(suffs, axis=0)  # (n, s, nm+1)
            rows = np.arange(s)
            for k in range(k_eff):
                tau = np.maximum(suffs[owner_s[:, k], rows, k + 1], 0.0)
                term = view.ctrs[k] * tau
                for i in range(view.n):
                    pays[:, i] += np.where(owner_s[:, k] == i, term, 0.0)
    elif k_eff > 0:  # VCG: externality against the others-only optimum
        for i in range(view.n):
            mask = owner_s != i
            crank = np.cumsum(mask, axis=1) - 1
            realized = np.zeros(s)
            for k in range(k_eff):
                realized += np.where(mask[:, k], view.ctrs[k] * bs[:, k], 0.0)
            opt = np.zeros(s)
            for p in range(view.nm):
                take = mask[:, p] & (crank[:, p] < k_eff)
                ck = view.ctrs[np.clip(crank[:, p], 0, k_eff - 1)]
                opt += np.where(take, ck * bs[:, p], 0.0)
            pays[:, i] = opt - realized

    return order, values, pays


def sample_perturbed_round(
    instance: AuctionInstance,
    alpha: Sequence[Scalar],
    eps: float,
    rng_stream: np.random.Generator,
    diagnostics: dict | None = None,
) -> tuple[Allocation, WelfareReport, PaymentBreakdown]:
    """One smoothed auction round: perturb bids, allocate, settle payments.

    Noise is drawn independently per item from U[0, eps], so the perturbed
    bids are strictly ordered with probability 1 and the allocation is
    unique. A realized exact tie (possible in floating point) falls back to
    catalog order and is counted in `diagnostics["tie_rounds"]` if given.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    fl = instance.as_float()
    alpha = tuple(float(a) for a in check_multipliers(fl, [float(a) for a in alpha]))
    view = _FloatView(fl)
    xi = rng_stream.uniform(0.0, eps, size=view.nm)
    base = view.bids0(np.array(alpha))
    perturbed_flat = base + xi
    rows: list[list[float]] = [[] for _ in range(fl.num_bidders)]
    for idx, (i, _) in enumerate(view.items):
        rows[i].append(float(perturbed_flat[idx]))
    profile = BidProfile(bids=tuple(tuple(r) for r in rows))
    alloc = allocate(profile, FIRST_LISTED)
    if diagnostics is not None:
        seq = [profile.of(it) for it in alloc.ranking]
        if any(seq[t] == seq[t + 1] for t in range(len(seq) - 1)):
            diagnostics["tie_rounds"] = diagnostics.get("tie_rounds", 0) + 1
    return alloc, bidder_value(fl, alloc, profile), payments(fl, profile, alloc)


def estimate_smoothed(
    instance: AuctionInstance,
    alpha: Sequence[Scalar],
    eps: float,
    n_samples: int,
    rng_stream: np.random.Generator,
) -> SmoothedEstimate:
    """Monte-Carlo means of per-bidder value and payment over noise draws."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    view = _FloatView(instance)
    alpha = np.array([float(a) for a in check_multipliers(view.instance, alpha)])
    xi = rng_stream.uniform(0.0, eps, size=(n_samples, view.nm))
    _, values, pays = _batch_outcomes(view, alpha, xi)
    return _estimate_from_batch(values, pays)


def _estimate_from_batch(values: np.ndarray, pays: np.ndarray) -> SmoothedEstimate:
    draws = values.shape[0]
    if draws > 1:
        root = np.sqrt(draws)
        vse = values.std(axis=0, ddof=1) / root
        pse = pays.std(axis=0, ddof=1) / root
        sse = (values - pays).std(axis=0, ddof=1) / root
    else:
        vse = pse = sse = np.zeros(values.shape[1])
    return SmoothedEstimate(
        value_est=values.mean(axis=0),
        payment_est=pays.mean(axis=0),
        value_std_err=vse,
        payment_std_err=pse,
        slack_std_err=sse,
        draws=draws,
    )


def fixed_point_step(
    instance: AuctionInstance,
    alpha: Sequence[Scalar],
    est: SmoothedEstimate,
    damping: float = 1.0,
) -> tuple[float, ...]:
    """One damped update clip(alpha + damping*(value - payment), 1, cap)."""
    if not 0 < damping <= 1:
        raise InvalidInputError("damping must lie in (0, 1]")
    a = np.array([float(x) for x in alpha])
    step = a + damping * (est.value_est - est.payment_est)
    return tuple(np.clip(step, 1.0, float(instance.cap)))


def _noise_panel(seed: int, restart: int, stage: int, samples: int, nm: int) -> np.ndarray:
    """Uniform [0,1) panel assembled from fixed-size chunked substreams."""
    parts = []
    for cidx, start in enumerate(range(0, samples, _CHUNK)):
        size = min(_CHUNK, samples - start)
        ss = np.random.SeedSequence([seed, restart, stage, cidx])
        parts.append(np.random.default_rng(ss).random((size, nm)))
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]


def _extract_pi(
    view: _FloatView, alpha: np.ndarray, order: np.ndarray
) -> tuple[TieBreakDistribution, bool]:
    """Empirical allocation frequencies projected onto the unperturbed-valid set.

    Returns (distribution, projected_empty): when no sampled ranking survives
    the projection the deterministic catalog-order allocation is used as a
    point mass and the flag is set.
    """
    counts: dict[tuple, int] = {}
    for row in map(tuple, order):
        counts[row] = counts.get(row, 0) + 1
    bids_rows: list[list[float]] = [[] for _ in range(view.n)]
    base = view.bids0(alpha)
    for idx, (i, _) in enumerate(view.items):
        bids_rows[i].append(float(base[idx]))
    profile = BidProfile(bids=tuple(tuple(r) for r in bids_rows))
    kept: list[tuple[Allocation, int]] = []
    for row, c in sorted(counts.items()):
        alloc = Allocation(ranking=tuple(view.items[p] for p in row))
        if is_valid(alloc, profile):
            kept.append((alloc, c))
    if not kept:
        return TieBreakDistribution.point_mass(allocate(profile, FIRST_LISTED)), True
    total = sum(c for _, c in kept)
    support = tuple((alloc, c / total) for alloc, c in kept)
    return TieBreakDistribution(support=support), False


def _polish_candidate(view: _FloatView, alpha: np.ndarray, window: float):
    """Snap near-boundary multipliers and near-tied bids to exact values and
    look for exact tie-break weights meeting the equilibrium conditions.

    Iterated multipliers often stall within Monte-Carlo resolution of an
    equilibrium that sits exactly on a bid crossing; this rationalizes the
    candidate. Returns (alpha, pi, report) with Fraction multipliers and an
    exact PASS report, or None when no exact equilibrium is found nearby.
    """
    from fractions import Fraction

    from .model import CombinatorialBlowupError, enumerate_valid_allocations

    exact = view.instance.as_exact()
    n = exact.num_bidders
    cap = exact.cap
    vmax = [max(vals) for vals in exact.values]
    alpha_ex: list = [Fraction(float(a)) for a in alpha]
    pinned = [False] * n
    for i in range(n):
        if vmax[i] == 0:
            alpha_ex[i] = Fraction(1)
            pinned[i] = True
        elif (cap - alpha_ex[i]) * vmax[i] <= window:
            alpha_ex[i] = cap
            pinned[i] = True
        elif (alpha_ex[i] - 1) * vmax[i] <= window:
            alpha_ex[i] = Fraction(1)
            pinned[i] = True

    def bid(i, j):
        return alpha_ex[i] * exact.values[i][j]

    # cluster items whose bids sit within the snap window of each other
    entries = sorted(((float(bid(i, j)), (i, j)) for i, j in exact.items()))
    clusters: list[list[tuple[int, int]]] = []
    for pos, (b, it) in enumerate(entries):
        if pos > 0 and b - entries[pos - 1][0] <= window:
            clusters[-1].append(it)
        else:
            clusters.append([it])
    for cluster in clusters:
        owners = {it[0] for it in cluster}
        if len(cluster) < 2 or len(owners) < 2:
            continue
        pinned_items = [it for it in cluster if pinned[it[0]]]
        if pinned_items:
            level = bid(*pinned_items[0])
        else:
            level = bid(*cluster[len(cluster) // 2])
        for i in sorted(owners):
            if pinned[i]:
                continue
            candidates = [it for it in cluster if it[0] == i and exact.values[i][it[1]] > 0]
            if not candidates:
                continue
            j = min(candidates, key=lambda it: abs(float(bid(*it)) - float(level)))[1]
            a_new = level / exact.values[i][j]
            if 1 <= a_new <= cap and abs(float(a_new - alpha_ex[i])) * float(vmax[i]) <= 2 * window:
                alpha_ex[i] = a_new
                pinned[i] = True

    bids = induce_bids(exact, tuple(alpha_ex))
    try:
        allocations = enumerate_valid_allocations(bids, limit=5040)
    except CombinatorialBlowupError:
        return None
    pi = _feasible_tie_break(exact, bids, tuple(alpha_ex), allocations)
    if pi is None:
        return None
    report = verify(exact, tuple(alpha_ex), pi, tolerance=0)
    if report.verdict != PASS:
        return None
    return tuple(alpha_ex), pi, report


def _solve_one_restart(
    view: _FloatView, config: SolverConfig, eps0: float, fp_tol: float, restart: int
) -> dict:
    n = view.n
    if restart == 0:
        if config.init_alpha is not None:
            if len(config.init_alpha) != n:
                raise InvalidInputError("init_alpha length does not match bidders")
            alpha = np.clip(np.array(config.init_alpha), 1.0, view.cap)
        else:
            alpha = np.ones(n)
    else:
        ss = np.random.SeedSequence([config.seed, 1, restart])
        alpha = np.random.default_rng(ss).uniform(1.0, view.cap, size=n)
    trace: list[tuple[int, int, float, float, tuple[float, ...]]] = []
    residual = float("inf")
    for stage in range(config.stages):
        eps_t = eps0 * config.eps_decay**stage
        # early stages travel and can run on small panels; the final stage uses
        # the full sample budget so the map's Monte-Carlo granularity is fine
        # enough for the residual tolerance
        samples = max(
            min(256, config.samples_per_eval),
            config.samples_per_eval >> (config.stages - 1 - stage),
        )
        panel = _noise_panel(config.seed, restart, stage, samples, view.nm)
        xi = panel * eps_t
        # per-bidder step scale: halve on slack sign flips (oscillation across a
        # reorder boundary collapses geometrically), re-grow slowly on consistent
        # direction so coordinates can resume traveling along plateaus
        eta = np.full(n, config.damping)
        prev_slack = None
        final_stage = stage == config.stages - 1
        best_alpha = alpha.copy()
        best_residual = float("inf")
        for it in range(config.max_iters_per_stage):
            _, values, pays = _batch_outcomes(view, alpha, xi)
            slack = values.mean(axis=0) - pays.mean(axis=0)
            raw = np.clip(alpha + slack, 1.0, view.cap)
            residual = float(np.max(np.abs(raw - alpha)))
            trace.append((stage, it, eps_t, residual, tuple(alpha)))
            if residual < best_residual:
                best_residual = residual
                best_alpha = alpha.copy()
            if residual < fp_tol:
                break
            if prev_slack is not None:
                flipped = slack * prev_slack < 0
                eta = np.where(
                    flipped,
                    np.maximum(eta * 0.5, 1e-9),
                    np.minimum(eta * 1.2, 1.0),
                )
            prev_slack = slack
            alpha = np.clip(alpha + eta * slack, 1.0, view.cap)
        if final_stage:
            alpha = best_alpha  # the minimum-residual iterate is the candidate

    # one clean evaluation at the final multipliers for extraction + reporting
    eps_final = eps0 * config.eps_decay ** (config.stages - 1)
    panel = _noise_panel(config.seed, restart, config.stages - 1, config.samples_per_eval, view.nm)
    xi = panel * eps_final
    order, values, pays = _batch_outcomes(view, alpha, xi)
    est = _estimate_from_batch(values, pays)
    raw = np.clip(alpha + (est.value_est - est.payment_est), 1.0, view.cap)
    residual = float(np.max(np.abs(raw - alpha)))
    pi, projected_empty = _extract_pi(view, alpha, order)
    tol = 3.0 * float(est.slack_std_err.max(initial=0.0)) + fp_tol
    alpha_out: tuple = tuple(float(a) for a in alpha)
    report = verify(view.instance, alpha_out, pi, tolerance=tol)
    polished = False
    if report.verdict != PASS:
        rescue = _polish_candidate(view, alpha, max(4.0 * eps_final, tol))
        if rescue is not None:
            alpha_out, pi, report = rescue
            polished = True
    status = CONVERGED if residual < fp_tol and report.verdict == PASS else NON_CONVERGED
    bs = np.take_along_axis(view.bids0(alpha)[None, :] + xi, order, axis=1)
    tie_rounds = 0
    if bs.shape[1] >= 2:
        tie_rounds = int(np.any(bs[:, :-1] == bs[:, 1:], axis=1).sum())
    return {
        "restart": restart,
        "alpha": alpha_out,
        "pi": pi,
        "report": report,
        "status": status,
        "residual": residual,
        "eps_final": eps_final,
        "trace": trace,
        "std_err": tuple(float(x) for x in est.slack_std_err),
        "tolerance": tol,
        "tie_rounds": tie_rounds,
        "projected_empty": projected_empty,
        "polished": polished,
    }


def _parallel_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def solve(instance: AuctionInstance, config: SolverConfig | None = None) -> EquilibriumCandidate:
    """Anneal the smoothed fixed-point map and return the best candidate.

    Runs `config.restarts` attempts (all-ones start first, then random
    starts), warm-starting each annealing stage from the last. The candidate
    reported CONVERGED passed verification at tolerance
    3 * max slack standard error + fp_tol; otherwise the status is
    NON_CONVERGED and the best residual is carried in the diagnostics.
    Identical (instance, config) inputs give identical results for any
    worker count.
    """
    config = config or SolverConfig()
    view = _FloatView(instance)
    eps0 = config.eps0 if config.eps0 is not None else 0.1 * view.scale
    fp_tol = config.fp_tol if config.fp_tol is not None else 1e-4 * view.scale

    results = _parallel_map(
        lambda r: _solve_one_restart(view, config, eps0, fp_tol, r),
        list(range(config.restarts)),
        config.workers,
    )

    def score(res):
        viol = float(res["report"].max_violation)
        return (res["status"] != CONVERGED, viol, res["residual"], res["restart"])

    best = min(results, key=score)
    diagnostics = {
        "restart": best["restart"],
        "residual": best["residual"],
        "eps_final": best["eps_final"],
        "tolerance": best["tolerance"],
        "std_err": best["std_err"],
        "tie_rounds": best["tie_rounds"],
        "projected_empty": best["projected_empty"],
        "polished": best["polished"],
        "trace": best["trace"],
        "restart_statuses": [
            {"restart": r["restart"], "status": r["status"], "residual": r["residual"]}
            for r in results
        ],
    }
    return EquilibriumCandidate(
        alpha=best["alpha"],
        pi=best["pi"],
        report=best["report"],
        status=best["status"],
        diagnostics=diagnostics,
    )
