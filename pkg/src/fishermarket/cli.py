"""Command line interface: ``fishermarket <command> INSTANCE [options]``.

Every command writes a JSON report (see ``io.REPORT_SCHEMA``) to ``--output``
or to standard output. Exit status is 0 when the verdict is true, 1 when it
is false (the report is still written) and 2 for usage or input errors.
The default tolerance can be overridden with ``FISHERMARKET_TOL``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .ceei import ceei_exists_bruteforce, check_ceei_witness, spend_tolerance
from .eg import SolverConfig, eg_optimality_gap, kkt_verify, solve_eg
from .flow import ZeroPriceError, verify_equilibrium
from .market import DEFAULT_TOL, MarketError, is_normalized, normalize
from .snob import SnobMarket, corner_theorem_check, snob_clearing_search
from .sperner import ResolutionOverflowError, ScanLimitError, refine_clearing_prices

TOL_ENV = "FISHERMARKET_TOL"


class UsageError(Exception):
    pass


def default_tolerance() -> float:
    raw = os.environ.get(TOL_ENV)
    if raw is None:
        return DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise UsageError(f"{TOL_ENV}={raw!r} is not a number") from None
    if not tol > 0:
        raise UsageError(f"{TOL_ENV} must be positive")
    return tol


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _price_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad price list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fishermarket", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, instance_required=True):
        if instance_required:
            p.add_argument("instance", help="instance file (JSON)")
        p.add_argument("-o", "--output", help="report file (default: standard output)")
        p.add_argument("--tol", type=_positive_float, help=f"tolerance (default {DEFAULT_TOL}, env {TOL_ENV})")
        p.add_argument("--figures", metavar="DIR", help="also write PNG figures into DIR")

    p = sub.add_parser("solve", help="equilibrium by the Eisenberg-Gale program")
    common(p)
    p.add_argument("--max-iterations", type=_positive_int, default=SolverConfig.max_iterations)
    p.add_argument("--no-flow", action="store_true", help="skip the max-flow certificate")

    p = sub.add_parser("verify", help="certify prices with the max-flow test")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prices", type=_price_list, help="comma separated price vector")
    src.add_argument("--from-report", help="take prices from a solve report")
    p.add_argument("--dump-network", metavar="FILE", help="write the flow network as text")

    p = sub.add_parser("sperner", help="clearing prices by Sperner labelling")
    common(p)
    p.add_argument("--k0", type=_positive_int, default=2)
    p.add_argument("--target-diameter", type=_positive_float, default=1e-4)
    p.add_argument("--normalize", action="store_true", help="normalize the instance first")
    p.add_argument("--trace", metavar="FILE", help="write the per-round trace")

    p = sub.add_parser("snob", help="snob-effect grid search")
    common(p, instance_required=False)
    p.add_argument("instance", nargs="?", help="instance file with alphas")
    p.add_argument("--theorem", type=_positive_int, metavar="GRID",
                   help="run the one-good corner check on GRID points instead")
    p.add_argument("--alphas", type=_price_list, help="override the instance's alphas")
    p.add_argument("--price-grid", type=_positive_int, default=20)
    p.add_argument("--alloc-grid", type=_positive_int, default=11)
    p.add_argument("--by-capacity", action="store_true", help="shares relative to supply")
    p.add_argument("--top", type=_positive_int, default=10)
    p.add_argument("--clear-tol", type=_positive_float,
                   help="residual counted as clearing (default 1/(alloc_grid-1))")

    p = sub.add_parser("ceei", help="brute-force CEEI on a tiny indivisible market")
    common(p)
    p.add_argument("--resolution", type=_positive_int, default=100)

    p = sub.add_parser("check-instance", help="validate an instance file")
    common(p)
    return parser


def _figure(args, name: str) -> Optional[str]:
    if not args.figures:
        return None
    return str(Path(args.figures) / name)


def cmd_solve(args, inst, tol):
    cfg = SolverConfig(max_iterations=args.max_iterations, tolerance=tol)
    rep = solve_eg(inst, cfg)
    if not args.no_flow and np.all(rep.prices > 0):
        rep.flow_ok = verify_equilibrium(inst, rep.prices, tol).ok
    payload = rep.to_payload()
    payload["kkt"] = kkt_verify(rep.allocation, rep.prices, inst, tol).as_dict()
    payload["optimality_gap"] = eg_optimality_gap(rep.allocation, rep.prices, inst)
    verdict = rep.converged and rep.kkt_ok and rep.clearing_ok and rep.flow_ok is not False
    figs = []
    if args.figures:
        from .plotting import plot_allocation, plot_convergence

        figs.append(plot_allocation(rep.allocation, rep.prices, _figure(args, "allocation.png")))
        figs.append(plot_convergence(rep.history, _figure(args, "convergence.png")))
    params = {"tol": tol, "max_iterations": args.max_iterations, "flow": not args.no_flow}
    return verdict, payload, params, figs


def _load_prices(args, inst):
    if args.prices is not None:
        return args.prices
    try:
        rep = io.load_report(args.from_report)
        prices = rep["payload"]["prices"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read prices from {args.from_report}: {exc}") from None
    return [float(p) for p in prices]


def cmd_verify(args, inst, tol):
    prices = np.asarray(_load_prices(args, inst), dtype=float)
    if prices.shape != (inst.m,):
        raise UsageError(f"got {prices.size} prices for {inst.m} goods")
    try:
        verdict = verify_equilibrium(inst, prices, tol)
    except ZeroPriceError as exc:
        payload = {"prices": prices, "flow_value": None, "budget_total": inst.budgets.sum(),
                   "reason": str(exc), "allocation": None}
        return False, payload, {"tol": tol}, []
    if args.dump_network and verdict.network is not None:
        Path(args.dump_network).write_text(verdict.network.dump())
    payload = {
        "prices": prices,
        "flow_value": None if verdict.flow is None else verdict.flow.value,
        "budget_total": inst.budgets.sum(),
        "reason": verdict.reason,
        "allocation": verdict.allocation if verdict.ok else None,
    }
    figs = []
    if args.figures and verdict.ok:
        from .plotting import plot_allocation

        figs.append(plot_allocation(verdict.allocation, prices, _figure(args, "allocation.png")))
    return verdict.ok, payload, {"tol": tol}, figs


def cmd_sperner(args, inst, tol):
    work = inst
    if not is_normalized(inst):
        if not args.normalize:
            raise UsageError("instance is not normalized (pass --normalize)")
        work = normalize(inst)
    params = {"k0": args.k0, "target_diameter": args.target_diameter,
              "normalize": bool(args.normalize), "tol": tol}
    try:
        res = refine_clearing_prices(work, args.k0, args.target_diameter)
    except (ResolutionOverflowError, ScanLimitError) as exc:
        print(f"fishermarket sperner: {exc}", file=sys.stderr)
        return False, {"prices": None, "k": None, "diameter": None, "rounds": [], "error": str(exc)}, params, []
    # back to the original units: sum_j p_j C_j = sum_i B_i
    scaled = res.prices * inst.budgets.sum() / inst.capacities
    # the search settles to within the target diameter; the final cell is finer
    scale = max(res.diameter, args.target_diameter)
    gap_tol = max(tol, 10 * inst.m * scale * inst.budgets.sum())
    check = verify_equilibrium(inst, scaled, gap_tol, rel_tol=100 * scale / res.prices.min())
    if args.trace:
        Path(args.trace).write_text(res.trace())
    payload = {
        "prices": res.prices,
        "scaled_prices": scaled,
        "k": res.k,
        "diameter": res.diameter,
        "rounds": [h.line() for h in res.history],
        "flow_ok": check.ok,
        "flow_reason": check.reason,
    }
    figs = []
    if args.figures:
        from .plotting import plot_sperner

        figs.append(plot_sperner(res, _figure(args, "sperner.png")))
    return check.ok, payload, params, figs


def cmd_snob(args, inst, tol):
    figs = []
    if args.theorem is not None:
        v = corner_theorem_check(args.theorem)
        payload = {
            "candidates": [],
            "theorem": {
                "passed": v.passed,
                "grid_points": v.grid_points,
                "value": v.value,
                "allocation": v.allocation,
                "maximizers": v.maximizers,
                "reason": v.reason,
            },
        }
        if args.figures:
            from .plotting import plot_snob_objective

            figs.append(plot_snob_objective(args.theorem, _figure(args, "snob_objective.png")))
        return v.passed, payload, {"theorem": args.theorem}, figs
    if inst is None:
        raise UsageError("snob needs an instance or --theorem")
    try:
        snob = SnobMarket.from_instance(inst, args.alphas)
    except MarketError as exc:
        raise UsageError(str(exc)) from None
    cands = snob_clearing_search(snob, args.price_grid, args.alloc_grid, args.by_capacity)
    clear_tol = args.clear_tol if args.clear_tol is not None else 1.0 / (args.alloc_grid - 1)
    verdict = bool(cands) and cands[0].residual <= clear_tol
    payload = {"candidates": [c.to_payload() for c in cands[: args.top]], "searched": len(cands)}
    if args.figures and cands:
        from .plotting import plot_candidates

        figs.append(plot_candidates(cands, _figure(args, "candidates.png")))
    params = {
        "alphas": snob.alphas,
        "price_grid": args.price_grid,
        "alloc_grid": args.alloc_grid,
        "by_capacity": bool(args.by_capacity),
        "clear_tol": clear_tol,
    }
    return verdict, payload, params, figs


def cmd_ceei(args, inst, tol):
    try:
        res = ceei_exists_bruteforce(inst, args.resolution)
    except (MarketError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    payload = res.to_payload()
    if res.found:
        ok, why = check_ceei_witness(inst, res.prices, res.allocation, spend_tolerance(inst, args.resolution))
        payload["recheck"] = {"ok": ok, "reason": why}
    figs = []
    if args.figures and res.found:
        from .plotting import plot_allocation

        figs.append(plot_allocation(res.allocation.x, res.prices, _figure(args, "allocation.png")))
    return res.found, payload, {"resolution": args.resolution}, figs


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sperner": cmd_sperner,
    "snob": cmd_snob,
    "ceei": cmd_ceei,
}


def _emit(report: dict, output: Optional[str]):
    text = io.dumps_report(report)
    if output:
        Path(output).write_text(text)
        print(f"{report['command']}: verdict {str(report['verdict']).lower()} -> {output}")
    else:
        sys.stdout.write(text)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        tol = args.tol if args.tol is not None else default_tolerance()
        inst = None
        if args.instance is not None:
            try:
                inst = io.load_instance(args.instance)
            except OSError as exc:
                raise UsageError(f"cannot read {args.instance}: {exc.strerror}") from None
            except io.InstanceFormatError as exc:
                raise UsageError(str(exc)) from None
            except MarketError as exc:
                if args.command != "check-instance":
                    raise UsageError(f"{args.instance}: {exc}") from None
                report = io.make_report(
                    "check-instance", False, {"valid": False, "error": str(exc)},
                    source=args.instance, parameters={},
                )
                _emit(report, args.output)
                print(f"{args.instance}: {exc}", file=sys.stderr)
                return 1
        if args.command == "check-instance":
            verdict = True
            payload = {"valid": True, "n": inst.n, "m": inst.m, "normalized": is_normalized(inst),
                       "divisible": inst.divisible, "has_alphas": inst.alphas is not None}
            params, figs = {}, []
        else:
            verdict, payload, params, figs = COMMANDS[args.command](args, inst, tol)
    except UsageError as exc:
        print(f"fishermarket {args.command}: {exc}", file=sys.stderr)
        return 2
    report = io.make_report(
        args.command, verdict, payload, instance=inst, source=args.instance,
        parameters=params, figures=figs,
    )
    _emit(report, args.output)
    return 0 if verdict else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
