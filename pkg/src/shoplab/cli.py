"""Command-line front end.

Subcommands: gen (instance files), run (one auction outcome), solve
(equilibrium search), verify (equilibrium conditions), poa (welfare-ratio
reports and sweeps), goldens (replay of the worked reference numbers).

Exit codes are the machine contract: 0 success/PASS, 2 FAIL, 3
INCONCLUSIVE or NON_CONVERGED, 1 I/O or parse errors. Report files are
byte-deterministic for fixed flags and seed, independent of --workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import gen as generators
from .mechanisms import (
    FIRST_LISTED,
    FavorBidder,
    OUTCOME_CSV_HEADER,
    allocate,
    bidder_value,
    expected_outcome,
    outcome_csv_rows,
    payments,
)
from .model import (
    AuctionInstance,
    InvalidInputError,
    Mechanism,
    TieBreakDistribution,
    dumps_instance,
    format_scalar,
    induce_bids,
    load_instance,
    save_instance,
)
from .poa import (
    POA_CSV_HEADER,
    check_disjoint_ownership,
    construct_a_opt,
    gen_tightness_instance,
    optimal_welfare,
    poa_report,
)
from .solver import CONVERGED, SolverConfig, solve
from .verifier import (
    EquilibriumCandidate,
    dumps_candidate,
    find_equilibria_bruteforce,
    parse_candidate,
    report_to_dict,
    verify,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAIL = 2
EXIT_INCONCLUSIVE = 3


def _env_seed() -> int:
    raw = os.environ.get("SHOPLAB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InvalidInputError(f"SHOPLAB_SEED must be an integer, got {raw!r}")


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _parse_alpha(raw: str, arith: str):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise InvalidInputError("empty multiplier list")
    if arith == "rational":
        out = []
        for p in parts:
            frac = Fraction(p)
            out.append(int(frac) if frac.denominator == 1 else frac)
        return tuple(out)
    return tuple(float(p) for p in parts)


def _instance_from_args(args) -> AuctionInstance:
    instance = load_instance(args.instance, arith=args.arith)
    if getattr(args, "mechanism", None):
        instance = AuctionInstance(
            values=instance.values,
            ctrs=instance.ctrs,
            cap=instance.cap,
            mechanism=Mechanism(args.mechanism),
            self_pricing=instance.self_pricing or bool(getattr(args, "self_pricing", False)),
            bidder_ids=instance.bidder_ids,
        )
    elif getattr(args, "self_pricing", False):
        instance = AuctionInstance(
            values=instance.values,
            ctrs=instance.ctrs,
            cap=instance.cap,
            mechanism=instance.mechanism,
            self_pricing=True,
            bidder_ids=instance.bidder_ids,
        )
    return instance


def _solver_config_from_args(args) -> SolverConfig:
    config = SolverConfig()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            config = SolverConfig.from_json(f.read())
    seed = args.seed if args.seed is not None else _env_seed()
    return config.with_overrides(
        eps0=args.eps0,
        eps_decay=args.eps_decay,
        stages=args.stages,
        samples_per_eval=args.samples,
        damping=args.damping,
        fp_tol=args.tol,
        restarts=args.restarts,
        seed=seed,
        workers=args.workers,
        init_alpha=tuple(float(a) for a in _parse_alpha(args.init_alpha, "float"))
        if getattr(args, "init_alpha", None)
        else None,
    )


# --- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    if args.spec == "example1":
        instance = generators.example1_instance(
            mechanism=Mechanism(args.mechanism or "gsp"), self_pricing=args.self_pricing
        )
        _write_text(args.out, dumps_instance(instance))
        print(f"wrote {args.out}")
        return EXIT_OK
    if args.spec == "tightness":
        eps_prime = Fraction(args.eps_prime)
        instance, alpha, alloc = gen_tightness_instance(
            args.slots, eps_prime, mechanism=Mechanism(args.mechanism or "gsp")
        )
        outdir = Path(args.out)
        _write_text(outdir / "instance.json", dumps_instance(instance))
        pi = TieBreakDistribution.point_mass(alloc)
        report = verify(instance, alpha, pi, tolerance=0)
        candidate = EquilibriumCandidate(alpha=alpha, pi=pi, report=report, status="EXACT")
        _write_text(outdir / "candidate.json", dumps_candidate(candidate))
        print(f"wrote {outdir}/instance.json and {outdir}/candidate.json")
        return EXIT_OK
    # random family
    if args.strict_slots and args.slots is not None and args.slots > args.bidders * args.items:
        raise InvalidInputError(
            f"unsatisfiable spec: {args.slots} slots exceed {args.bidders * args.items} items"
        )
    outdir = Path(args.out)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1CE]))
    for idx in range(args.count):
        instance = generators.random_instance(
            rng,
            max_bidders=args.bidders,
            max_items=args.items,
            max_slots=args.slots or 4,
            mechanism=Mechanism(args.mechanism) if args.mechanism else None,
            cap_range=(args.cap_min, args.cap_max),
        )
        _write_text(outdir / f"instance_{idx:04d}.json", dumps_instance(instance))
    print(f"wrote {args.count} instance files under {outdir}")
    return EXIT_OK


# --- run -------------------------------------------------------------------


def cmd_run(args) -> int:
    instance = _instance_from_args(args)
    alpha = _parse_alpha(args.alpha, args.arith)
    bids = induce_bids(instance, alpha)
    alloc = allocate(
        bids, FavorBidder(args.favor_bidder) if args.favor_bidder is not None else FIRST_LISTED
    )
    welfare = bidder_value(instance, alloc, bids)
    breakdown = payments(instance, bids, alloc)
    lines = []
    if args.format == "csv":
        lines.append(OUTCOME_CSV_HEADER)
        lines.extend(outcome_csv_rows(instance, welfare, breakdown))
    else:
        lines.append(f"mechanism: {instance.mechanism.value}")
        lines.append("allocation (rank: item bid):")
        for k, item in enumerate(alloc.ranking):
            marker = "*" if k < instance.num_slots else " "
            lines.append(
                f"  {k + 1:3d}{marker} {instance.ids[item[0]]}[{item[1]}]"
                f" bid={format_scalar(bids.of(item))}"
            )
        if breakdown.per_item_price is not None:
            lines.append("per-click prices:")
            for item, tau in breakdown.per_item_price:
                lines.append(f"  {instance.ids[item[0]]}[{item[1]}] tau={format_scalar(tau)}")
        for i in range(instance.num_bidders):
            lines.append(
                f"bidder {instance.ids[i]}: value={format_scalar(welfare.per_bidder_value[i])}"
                f" payment={format_scalar(breakdown.per_bidder_payment[i])}"
            )
        lines.append(f"welfare: {format_scalar(welfare.welfare)}")
        lines.append(f"revenue: {format_scalar(breakdown.revenue)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- solve -----------------------------------------------------------------


def cmd_solve(args) -> int:
    instance = _instance_from_args(args).as_float()
    config = _solver_config_from_args(args)
    candidate = solve(instance, config)
    diag = candidate.diagnostics or {}
    if args.out:
        outdir = Path(args.out)
        _write_text(outdir / "candidate.json", dumps_candidate(candidate))
        rows = [
            json.dumps(
                {
                    "stage": s,
                    "iter": i,
                    "eps": repr(e),
                    "residual": repr(r),
                    "alpha": [repr(a) for a in al],
                },
                sort_keys=True,
            )
            for s, i, e, r, al in diag.get("trace", [])
        ]
        _write_text(outdir / "diagnostics.jsonl", "\n".join(rows) + ("\n" if rows else ""))
        summary = {
            "status": candidate.status,
            "residual": repr(diag.get("residual")),
            "tolerance": repr(diag.get("tolerance")),
            "restart": diag.get("restart"),
            "polished": diag.get("polished"),
            "restart_statuses": [
                {"restart": r["restart"], "status": r["status"], "residual": repr(r["residual"])}
                for r in diag.get("restart_statuses", [])
            ],
        }
        _write_text(outdir / "report.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(
        f"{candidate.status}: alpha=({', '.join(format_scalar(a) for a in candidate.alpha)})"
        f" residual={diag.get('residual'):.3g} verdict={candidate.report.verdict}"
    )
    return EXIT_OK if candidate.status == CONVERGED else EXIT_INCONCLUSIVE


# --- verify ----------------------------------------------------------------


def cmd_verify(args) -> int:
    instance = _instance_from_args(args)
    if args.bruteforce:
        candidates = find_equilibria_bruteforce(
            instance, alpha_grid_resolution=args.resolution, limit=args.limit
        )
        if args.out:
            body = "".join(dumps_candidate(c) for c in candidates)
            _write_text(args.out, body)
        print(f"{len(candidates)} equilibrium candidate(s) found")
        return EXIT_OK if candidates else EXIT_INCONCLUSIVE

    if args.candidate:
        with open(args.candidate, "r", encoding="utf-8") as f:
            alpha, pi = parse_candidate(f.read(), arith=args.arith)
    elif args.alpha:
        alpha = _parse_alpha(args.alpha, args.arith)
        pi = TieBreakDistribution.point_mass(allocate(induce_bids(instance, alpha), FIRST_LISTED))
    else:
        raise InvalidInputError("verify needs --candidate or --alpha")
    tol = args.tol if args.tol is not None else 0
    report = verify(instance, alpha, pi, tolerance=tol)
    if args.out:
        _write_text(args.out, json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n")
    print(f"verdict: {report.verdict}")
    for reason in report.reasons:
        print(f"  {reason}")
    return EXIT_OK if report.verdict == "PASS" else EXIT_FAIL


# --- poa -------------------------------------------------------------------


def cmd_poa(args) -> int:
    if args.sweep is None:
        instance = _instance_from_args(args)
        if not args.candidate:
            raise InvalidInputError("poa needs --candidate (or --sweep N)")
        with open(args.candidate, "r", encoding="utf-8") as f:
            alpha, pi = parse_candidate(f.read(), arith=args.arith)
        report = verify(instance, alpha, pi, tolerance=args.tol if args.tol is not None else 0)
        candidate = EquilibriumCandidate(alpha=alpha, pi=pi, report=report, status="EXACT")
        if report.verdict != "PASS":
            print("FAIL: candidate does not verify; no ratio computed")
            return EXIT_FAIL
        pr = poa_report(instance, candidate, tol=args.tol if args.tol is not None else 0)
        ratio = "inf" if pr.degenerate else format_scalar(pr.ratio)
        print(
            f"wel_opt={format_scalar(pr.wel_opt)} wel_eq={format_scalar(pr.wel_eq)}"
            f" rev_eq={format_scalar(pr.rev_eq)} ratio={ratio}"
        )
        ok = pr.bound_ok and pr.welfare_covers_revenue and all(pr.smoothness_ok)
        return EXIT_OK if ok else EXIT_FAIL
    return _poa_sweep(args)


def _sweep_one(task) -> dict:
    idx, seed, args_ns = task
    rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
    instance = generators.random_instance(
        rng,
        max_bidders=3,
        max_items=3,
        max_slots=4,
        cap_range=(1, 5),
    ).as_float()
    scale = max(max(v) for v in instance.values)
    config = SolverConfig(
        stages=args_ns.stages or 10,
        samples_per_eval=args_ns.samples or 2048,
        restarts=args_ns.restarts or 3,
        max_iters_per_stage=200,
        fp_tol=args_ns.tol if args_ns.tol is not None else 4e-3 * scale,
        seed=idx,
    )
    candidate = solve(instance, config)
    row: dict = {
        "seed": idx,
        "n": instance.num_bidders,
        "m": max(instance.items_per_bidder),
        "K": instance.num_slots,
        "mechanism": instance.mechanism.value,
        "converged": candidate.status == CONVERGED,
        "passed": candidate.report is not None and candidate.report.verdict == "PASS",
    }
    if row["passed"]:
        view = instance.as_exact() if (candidate.diagnostics or {}).get("polished") else instance
        pr = poa_report(view, candidate, tol=0)
        ownership = True
        for alloc, _ in candidate.pi.support:
            a_opt = construct_a_opt(view, alloc)
            for k in range(1, view.num_slots + 1):
                ok, _ = check_disjoint_ownership(view, alloc, a_opt, k)
                ownership = ownership and ok
        row.update(
            wel_opt=pr.wel_opt,
            wel_eq=pr.wel_eq,
            rev_eq=pr.rev_eq,
            ratio=pr.ratio,
            degenerate=pr.degenerate,
            smoothness_ok=all(pr.smoothness_ok),
            ownership_ok=ownership,
            bound_ok=pr.bound_ok,
            welfare_covers_revenue=pr.welfare_covers_revenue,
        )
    return row


def _poa_sweep(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    tasks = [(idx, seed, args) for idx in range(args.sweep)]
    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]

    lines = [POA_CSV_HEADER]
    all_ok = True
    converged = passed = 0
    for row in rows:
        if row["converged"]:
            converged += 1
        if row["passed"]:
            passed += 1
            ratio = "inf" if row["degenerate"] else format_scalar(row["ratio"])
            lines.append(
                ",".join(
                    [
                        str(row["seed"]),
                        str(row["n"]),
                        str(row["m"]),
                        str(row["K"]),
                        row["mechanism"],
                        format_scalar(row["wel_opt"]),
                        format_scalar(row["wel_eq"]),
                        format_scalar(row["rev_eq"]),
                        ratio,
                        str(row["smoothness_ok"]).lower(),
                        str(row["ownership_ok"]).lower(),
                    ]
                )
            )
            all_ok = all_ok and row["smoothness_ok"] and row["ownership_ok"] and row["bound_ok"]
        else:
            lines.append(
                ",".join(
                    [
                        str(row["seed"]),
                        str(row["n"]),
                        str(row["m"]),
                        str(row["K"]),
                        row["mechanism"],
                        "", "", "", "", "", "",
                    ]
                )
            )
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(
        f"sweep: {args.sweep} instances, {converged} converged, {passed} verified PASS,"
        f" all bounds {'ok' if all_ok else 'VIOLATED'}",
        file=sys.stderr,
    )
    return EXIT_OK if all_ok else EXIT_FAIL


# --- goldens ---------------------------------------------------------------


def cmd_goldens(args) -> int:
    failures = 0

    def check(name: str, ok: bool, detail: str = ""):
        nonlocal failures
        if ok:
            print(f"  ok   {name}")
        else:
            failures += 1
            print(f"  FAIL {name}  {detail}")

    print("worked example, identity multipliers (exact arithmetic):")
    inst = generators.example1_instance()
    bids = induce_bids(inst, (1, 1))
    check("induced bids", bids.bids == ((10, 8), (15, 6)))
    alloc = allocate(bids)
    check("allocation order", alloc.ranking == ((1, 0), (0, 0), (0, 1), (1, 1)))
    w = bidder_value(inst, alloc, bids)
    check("bidder values", w.per_bidder_value == (11, 15) and w.welfare == 26)
    g = payments(inst, bids, alloc)
    check("second-price payments", g.per_bidder_payment == (Fraction(36, 5), 10))
    vcg_inst = generators.example1_instance(mechanism=Mechanism.VCG)
    v = payments(vcg_inst, bids, alloc)
    check(
        "externality payments",
        v.per_bidder_payment == (Fraction(21, 5), Fraction(23, 5)),
    )
    from .mechanisms import counterfactual_optimal_bid_welfare

    check(
        "counterfactual bid-welfare without bidder 2",
        counterfactual_optimal_bid_welfare(inst, bids, 1) == Fraction(78, 5),
    )
    rep = verify(inst, (1, 1), TieBreakDistribution.point_mass(alloc), tolerance=0)
    check("identity multipliers are not maximally paced", rep.verdict == "FAIL")

    print("tightness family:")
    for K, eps_prime, min_ratio in ((3, Fraction(1, 100), None), (100, Fraction(1, 1000), Fraction(198, 100))):
        ti, ta, tal = gen_tightness_instance(K, eps_prime)
        pi = TieBreakDistribution.point_mass(tal)
        trep = verify(ti, ta, pi, tolerance=0)
        check(f"K={K} equilibrium verifies exactly", trep.verdict == "PASS")
        cand = EquilibriumCandidate(alpha=ta, pi=pi, report=trep, status="EXACT")
        pr = poa_report(ti, cand)
        expected = Fraction(2 * K - 1) / (K + (K - 1) * eps_prime)
        check(f"K={K} welfare ratio formula", pr.ratio == expected)
        if min_ratio is not None:
            check(f"K={K} ratio at least {float(min_ratio)}", pr.ratio >= min_ratio)
        wopt, _ = optimal_welfare(ti)
        check(f"K={K} optimal welfare = 2K-1", wopt == 2 * K - 1)

    print("summary:", "all goldens match" if failures == 0 else f"{failures} mismatches")
    return EXIT_OK if failures == 0 else EXIT_FAIL


# --- parser ----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--mechanism", choices=["gsp", "vcg"], default=None)
    p.add_argument("--self-pricing", action="store_true", dest="self_pricing")
    p.add_argument("--seed", type=int, default=None, help="falls back to SHOPLAB_SEED, then 0")
    p.add_argument("--arith", choices=["float", "rational"], default="rational")
    p.add_argument("--out", default=None)


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="solver config JSON file")
    p.add_argument("--eps0", type=float, default=None)
    p.add_argument("--eps-decay", type=float, default=None, dest="eps_decay")
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--damping", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--init-alpha", default=None, dest="init_alpha")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shoplab",
        description="multi-item position auctions: payments, equilibria, welfare ratios",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write instance files")
    p.add_argument("spec", choices=["example1", "tightness", "random"])
    p.add_argument("--slots", type=int, default=None, help="K (tightness/random)")
    p.add_argument("--eps-prime", default="0.01", dest="eps_prime")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--bidders", type=int, default=3)
    p.add_argument("--items", type=int, default=3)
    p.add_argument("--cap-min", type=float, default=1.0, dest="cap_min")
    p.add_argument("--cap-max", type=float, default=10.0, dest="cap_max")
    p.add_argument("--strict-slots", action="store_true", dest="strict_slots")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run one auction and print the outcome")
    p.add_argument("--instance", required=True)
    p.add_argument("--alpha", required=True, help="comma-separated multipliers")
    p.add_argument("--favor-bidder", type=int, default=None, dest="favor_bidder")
    p.add_argument("--format", choices=["csv", "human"], default="human")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve", help="search for an autobidding equilibrium")
    p.add_argument("--instance", required=True)
    _add_common(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check equilibrium conditions")
    p.add_argument("--instance", required=True)
    p.add_argument("--candidate", default=None)
    p.add_argument("--alpha", default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--bruteforce", action="store_true")
    p.add_argument("--resolution", type=int, default=7)
    p.add_argument("--limit", type=int, default=5000)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("poa", help="welfare-ratio report or sweep")
    p.add_argument("--instance", default=None)
    p.add_argument("--candidate", default=None)
    p.add_argument("--sweep", type=int, default=None, help="run N random solver instances")
    p.add_argument("--tol", type=float, default=None)
    _add_common(p)
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_poa)

    p = sub.add_parser("goldens", help="replay the worked reference numbers")
    p.set_defaults(func=cmd_goldens)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
