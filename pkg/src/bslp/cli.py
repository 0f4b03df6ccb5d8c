"""Command-line interface.

Exit codes: 0 success, 1 infeasible or no solution, 2 input error,
3 numerical failure.  Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .dominance import dominance_feasible, solve_dominance
from .lp import NumericalBreakdown, check_dom_f, gordan_complete_recourse
from .lower import InducedInfeasible, LowerLevelError, SizeLimitError, induced_polyhedron
from .model import BenchmarkSpec, DiscreteDistribution, DominanceOrder, ModelError, RiskSpec, load_problem
from .reformulate import UnboundedBigM, UnsupportedSpec, build_table1, build_table2, genform_json, kkt_reformulate, listing
from .risk import RiskOverflow, q_risk
from .solve import (
    NoFeasiblePoint,
    NoMethod,
    NonConvergent,
    NumericalInconsistency,
    SolveStatus,
    solve_eps_path,
    solve_risk_model,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class InputError(ValueError):
    pass


@dataclass
class CliConfig:
    subcommand: str
    problem: Path | None
    out: Path | None
    spec: RiskSpec | None
    method: str
    seed: int
    threads: int
    tol: float | None


# ---------------------------------------------------------------------------
# Argument helpers


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:step`` (one per leader variable, comma separated) to grid points."""
    axes = []
    for part in text.split(","):
        try:
            lo, hi, step = (float(v) for v in part.split(":"))
        except ValueError as exc:
            raise InputError(f"grid {part!r} is not of the form lo:hi:step") from exc
        if not (step > 0 and hi >= lo and all(map(math.isfinite, (lo, hi, step)))):
            raise InputError(f"grid {part!r} needs finite lo <= hi and step > 0")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        pts = lo + step * np.arange(count)
        pts[-1] = min(pts[-1], hi)
        axes.append(pts)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def parse_vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise InputError(f"{name} must be a comma-separated list of numbers") from exc


def parse_benchmark(text: str) -> DiscreteDistribution:
    """A JSON file ``{"atoms": [...], "probs": [...]}`` or inline ``v@p,v@p`` (``v`` alone is a point mass)."""
    path = Path(text)
    if path.is_file():
        obj = json.loads(path.read_text())
        return DiscreteDistribution(np.asarray(obj["atoms"], dtype=float).reshape(-1, 1), obj["probs"])
    vals, probs = [], []
    for part in text.split(","):
        v, _, pr = part.partition("@")
        try:
            vals.append(float(v))
            probs.append(float(pr) if pr else 1.0)
        except ValueError as exc:
            raise InputError(f"benchmark entry {part!r} is not value@probability") from exc
    return DiscreteDistribution(np.array(vals).reshape(-1, 1), probs)


def parse_spec(text: str) -> RiskSpec:
    try:
        return RiskSpec.parse(text)
    except (ModelError, ValueError) as exc:
        raise InputError(f"bad --spec {text!r}: {exc}") from exc


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=True) + "\n"


def _floats(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------------------
# Subcommands


def cmd_check(args) -> int:
    p = load_problem(args.problem)
    dom = check_dom_f(p)
    rec = gordan_complete_recourse(p.lower.A)
    doc = {
        "dom_f": {
            "nonempty": dom.nonempty,
            "failed": dom.failed,
            "reason": dom.reason,
            "x": _floats(dom.x),
            "z": _floats(dom.z),
            "y": _floats(dom.y),
            "dual_witness": _floats(dom.u),
        },
        "complete_recourse": {"complete": rec.complete, "witness": _floats(rec.witness)},
    }
    try:
        P = induced_polyhedron(p)
        doc["induced_set"] = {"G": P.G.tolist(), "h": P.h.tolist()}
    except SizeLimitError as exc:
        doc["induced_set"] = {"error": str(exc)}
    _emit(_json(doc), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    p = load_problem(args.problem)
    spec = parse_spec(args.spec)
    if (args.x is None) == (args.grid is None):
        raise InputError("give exactly one of --x or --grid")
    pts = parse_grid(args.grid) if args.grid else parse_vector(args.x, "--x").reshape(1, -1)
    if pts.shape[1] != p.n:
        raise InputError(f"points have dimension {pts.shape[1]}, the problem has n = {p.n}")

    def value(x):
        if not p.X.contains(x):
            return math.inf
        try:
            return q_risk(p, spec, x)
        except InducedInfeasible:
            return math.inf

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        values = list(pool.map(value, pts))
    rows = [{"x": x, "value": v} for x, v in zip(pts, values)]
    analysis.write_csv(rows, args.out if args.out else sys.stdout, columns=("x", "value"))
    return EXIT_OK if any(math.isfinite(v) for v in values) else EXIT_INFEASIBLE


def cmd_solve(args) -> int:
    p = load_problem(args.problem)
    spec = parse_spec(args.spec)
    if args.eps_schedule:
        sched = parse_vector(args.eps_schedule, "--eps-schedule").tolist()
        path = solve_eps_path(build_table1(p, spec), sched)
        rep = path.final
        doc = rep.to_dict(timing=args.timing)
        doc["eps_path"] = {
            "feasible_at_zero": path.feasible_at_zero,
            "distances": path.distances,
            "values": [r.value for r in path.reports],
        }
    else:
        rep = solve_risk_model(p, spec, args.method)
        doc = rep.to_dict(timing=args.timing)
    _emit(_json(doc), args.out)
    if rep.status in (SolveStatus.INFEASIBLE,) or rep.x is None:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _table2_form(p, args):
    g = parse_vector(args.objective, "--objective") if args.objective else p.c
    if args.benchmark is None:
        raise InputError("--benchmark is required without --spec")
    return build_table2(p, g, bench=BenchmarkSpec(parse_benchmark(args.benchmark), DominanceOrder(args.order)))


def cmd_reformulate(args) -> int:
    p = load_problem(args.problem)
    gf = build_table1(p, parse_spec(args.spec)) if args.spec else _table2_form(p, args)
    kkt = kkt_reformulate(gf, args.eps) if args.kkt or args.eps else None
    if args.format == "listing":
        _emit(listing(gf), args.out)
    else:
        _emit(genform_json(gf, kkt) + "\n", args.out)
    if args.listing:
        Path(args.listing).write_text(listing(gf))
    return EXIT_OK


def cmd_dominance(args) -> int:
    p = load_problem(args.problem)
    if args.benchmark is None:
        raise InputError("--benchmark is required")
    bench = BenchmarkSpec(parse_benchmark(args.benchmark), DominanceOrder(args.order))
    if args.x is not None:
        x = parse_vector(args.x, "--x")
        rep = dominance_feasible(p, x, bench)
        doc = {
            "feasible": rep.feasible,
            "worst_point": rep.worst_point,
            "violation": rep.violation,
            "outcome_side": rep.outcome_side,
            "benchmark_side": rep.benchmark_side,
        }
        _emit(_json(doc), args.out)
        return EXIT_OK if rep.feasible else EXIT_INFEASIBLE
    g = parse_vector(args.objective, "--objective") if args.objective else p.c
    method = {"reformulate": "bigm", "grid": "grid"}[args.method]
    rep = solve_dominance(p, g, bench, method)
    _emit(_json(rep.to_dict(timing=args.timing)), args.out)
    return EXIT_OK


def cmd_stability(args) -> int:
    p = load_problem(args.problem)
    spec = parse_spec(args.spec)
    sizes = [int(v) for v in parse_vector(args.sizes, "--sizes")]
    if args.family == "e1":
        family = analysis.E1_FAMILY
    elif args.family == "finite":
        family = analysis.FiniteSupport(p.scenarios)
    else:
        lo, _, hi = args.family.partition(":")
        family = analysis.UniformBox(tuple(parse_vector(lo, "box lo")), tuple(parse_vector(hi, "box hi")))
    if isinstance(family, analysis.UniformBox) and len(family.lo) != p.s:
        raise InputError(f"sampling box has dimension {len(family.lo)}, scenarios have {p.s}")
    window = None
    if args.window:
        lo, hi = (float(v) for v in args.window.split(":"))
        window = (lo, hi)
    seeds = [args.seed + i for i in range(args.seeds)]

    def run(seed):
        return analysis.stability_experiment(p, spec, sizes, seed, family, window, args.reference)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        tables = list(pool.map(run, seeds))
    rows = [r for t in tables for r in t]
    cols = analysis.CSV_COLUMNS if args.timing else analysis.CSV_COLUMNS[:-1]
    analysis.write_csv(rows, args.out if args.out else sys.stdout, columns=cols)
    return EXIT_OK


def cmd_example_e1(args) -> int:
    _emit(analysis.example_e1_report(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bslp", description="Bilevel stochastic linear programs with random right-hand side.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(sp, problem=True):
        if problem:
            sp.add_argument("problem", type=Path, help="problem JSON file")
        sp.add_argument("--out", type=Path, default=None, help="output path (default: stdout)")
        sp.add_argument("--seed", type=int, default=0, help="seed of the counter-based generator")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        sp.add_argument("--tol", type=float, default=None, help="override of numerical tolerances")
        sp.add_argument("--timing", action="store_true", help="include wall-clock times in the output")

    sp = sub.add_parser("check", help="dom f, complete recourse and the induced feasible set")
    common(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("evaluate", help="risk of the outcome at points or on a grid (CSV)")
    common(sp)
    sp.add_argument("--spec", default="expectation")
    sp.add_argument("--x", default=None, help="comma-separated leader decision")
    sp.add_argument("--grid", default=None, help="lo:hi:step per leader variable, comma separated")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("solve", help="minimise a risk functional (JSON report)")
    common(sp)
    sp.add_argument("--spec", default="expectation")
    sp.add_argument("--method", choices=("reformulate", "grid"), default="reformulate")
    sp.add_argument("--eps-schedule", default=None, help="decreasing comma-separated relaxation levels")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("reformulate", help="emit the equivalent bilevel program and its KKT system")
    common(sp)
    sp.add_argument("--spec", default=None, help="risk functional; omit for a dominance model")
    sp.add_argument("--benchmark", default=None, help="JSON file or inline v@p,v@p")
    sp.add_argument("--order", choices=("first", "second"), default="first")
    sp.add_argument("--objective", default=None, help="leader cost vector g (default c)")
    sp.add_argument("--kkt", action="store_true", help="also emit the KKT system")
    sp.add_argument("--eps", type=float, default=0.0, help="complementarity relaxation of the KKT system")
    sp.add_argument("--format", choices=("json", "listing"), default="json")
    sp.add_argument("--listing", default=None, help="also write the algebraic listing to this path")
    sp.set_defaults(func=cmd_reformulate)

    sp = sub.add_parser("dominance", help="dominance feasibility at --x, or optimisation")
    common(sp)
    sp.add_argument("--benchmark", default=None, help="JSON file or inline v@p,v@p")
    sp.add_argument("--order", choices=("first", "second"), default="first")
    sp.add_argument("--x", default=None)
    sp.add_argument("--objective", default=None, help="leader cost vector g (default c)")
    sp.add_argument("--method", choices=("reformulate", "grid"), default="grid")
    sp.set_defaults(func=cmd_dominance)

    sp = sub.add_parser("stability", help="optimal values under growing empirical laws (CSV)")
    common(sp)
    sp.add_argument("--spec", default="expectation")
    sp.add_argument("--sizes", default="100,1000,10000")
    sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds starting at --seed")
    sp.add_argument("--family", default="e1", help="'e1', 'finite' or a box lo1,..:hi1,..")
    sp.add_argument("--window", default=None, help="localisation window lo:hi for every leader variable")
    sp.add_argument("--reference", type=float, default=None, help="optimal value under the true law")
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("example-e1", help="all numbers of the worked example")
    common(sp, problem=False)
    sp.set_defaults(func=cmd_example_e1)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    if args.tol is not None:
        _apply_tol(args.tol)
    try:
        return args.func(args)
    except (NoFeasiblePoint, InducedInfeasible, LowerLevelError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalInconsistency, NonConvergent, NumericalBreakdown, RiskOverflow) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelError, InputError, UnsupportedSpec, UnboundedBigM, NoMethod, ValueError, OSError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _apply_tol(tol: float) -> None:
    """``--tol`` sets the complementarity and integrality tolerances of the global solver."""
    from . import solve

    solve.COMP_TOL = tol
    solve.INT_TOL = tol


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
