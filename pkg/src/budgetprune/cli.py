"""Command line interface: ``budgetprune {train,prune,sweep,eval,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import io
from .baselines import ccp, ccp_prune, greedy_prune, impurity_stop
from .forest import CostModel, ForestParams, build_profiles, evaluate, train_forest
from .model import (apply, assignment_from_z, assignment_to_json, build_problem, is_valid,
                    objective)
from .oracle import BudgetExceededError
from .solver import SCHEDULES, SolverOptions, default_jobs, solve

log = logging.getLogger("budgetprune")

METHODS = ("budget", "ccp", "greedy", "stop")


class CliError(Exception):
    """Reported as a one-line message with exit code 2."""


# --------------------------------------------------------------------------
# shared helpers

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, forest=None, label=None, **kw):
    if path is None:
        return None
    if not Path(path).exists():
        raise CliError(f"no such file: {path}")
    if forest is not None:
        kw.update(classes=forest.classes, n_features=forest.num_features)
    return io.load_dataset(path, label=label, **kw)


def _costs(args, num_features) -> CostModel:
    if args.costs is None:
        return CostModel.uniform(num_features)
    if not Path(args.costs).exists():
        raise CliError(f"no such file: {args.costs}")
    return io.load_costs(args.costs, num_features)


def _solver_options(args) -> SolverOptions:
    return SolverOptions(step0=args.step, schedule=args.schedule, max_iters=args.max_iters,
                         gap_tol=args.gap_tol, n_jobs=default_jobs())


def _context(args):
    if args.model is None:
        raise CliError("--model is required")
    if not Path(args.model).exists():
        raise CliError(f"no such file: {args.model}")
    forest = io.load_forest(args.model)
    prof_path = args.valid or args.data
    if prof_path is None:
        raise CliError("--valid (or --data) is required to profile the forest")
    valid = _load(prof_path, forest, args.label)
    costs = _costs(args, forest.num_features)
    profiles = build_profiles(forest, valid.X, valid.y, n_jobs=default_jobs())
    return forest, profiles, costs


def _run_method(method, knob, forest, profiles, costs, args, ccp_seqs=None):
    """Prune with one method at one knob value. Returns (z, solver report or None)."""
    if method == "budget":
        problem = build_problem(forest, profiles, costs, knob, args.compute_cost)
        report = solve(problem, _solver_options(args))
        if args.trace:
            report.write_trace(args.trace)
        return report.assignment.z, report
    if method == "ccp":
        return ccp_prune(forest, knob, ccp_seqs), None
    if method == "greedy":
        return greedy_prune(forest, profiles, costs, knob, n_jobs=default_jobs()).points[-1].z, None
    return impurity_stop(forest, knob), None


def _knobs(args, single: bool):
    values = {"budget": args.lam, "greedy": args.lam, "ccp": args.alpha, "stop": args.tau}[args.method]
    flag = {"budget": "--lambda", "greedy": "--lambda", "ccp": "--alpha", "stop": "--tau"}[args.method]
    if not values:
        raise CliError(f"method {args.method} needs {flag}")
    if single and len(values) != 1:
        raise CliError(f"prune takes a single {flag}")
    return values


def _fmt(v) -> str:
    return io.format_number(v)


# --------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    if args.data is None:
        raise CliError("--data is required")
    data = _load(args.data, label=args.label)
    params = ForestParams(n_trees=args.trees, max_depth=args.max_depth,
                          feature_subset_size=args.feature_subset, seed=args.seed)
    jobs = default_jobs() if args.parallel else 1
    forest = train_forest(data.X, data.y, params, num_classes=len(data.classes),
                          classes=data.classes, n_jobs=jobs)
    out = _out_dir(args)
    io.save_forest(forest, out / "model.json")
    stats = {
        "num_trees": len(forest.trees),
        "num_features": forest.num_features,
        "num_classes": forest.num_classes,
        "trees": [{"depth": t.max_depth, "nodes": t.n_nodes, "leaves": int(t.is_leaf.sum())}
                  for t in forest.trees],
    }
    io.save_json(stats, out / "stats.json")
    print(f"trained {len(forest.trees)} trees, "
          f"{sum(t.n_nodes for t in forest.trees)} nodes -> {out / 'model.json'}")
    return 0


def cmd_prune(args) -> int:
    forest, profiles, costs = _context(args)
    knob = _knobs(args, single=True)[0]
    z, report = _run_method(args.method, knob, forest, profiles, costs, args)
    lam = knob if args.method in ("budget", "greedy") else (args.lam[0] if args.lam else 0.0)
    problem = build_problem(forest, profiles, costs, lam, args.compute_cost)
    assignment = report.assignment if report else assignment_from_z(problem, z)
    valid = is_valid(problem, assignment)
    if not valid:
        raise CliError(f"internal error: invalid pruning ({valid.violation})")
    obj = objective(problem, assignment)

    out = _out_dir(args)
    doc = assignment_to_json(problem, assignment)
    if not args.dump_solution:
        doc = {"z": doc["z"]}
    doc.update(method=args.method, knob=knob)
    io.save_json(doc, out / "solution.json")
    pruned = apply(forest, z)
    io.save_forest(pruned, out / "pruned_model.json")

    lines = [
        f"method: {args.method}",
        f"knob: {_fmt(knob)}",
        f"lambda: {_fmt(lam)}",
        f"objective: {_fmt(obj.total)}",
        f"error_term: {_fmt(obj.error)}",
        f"feature_cost_term: {_fmt(obj.feature_cost)}",
        f"compute_cost_term: {_fmt(obj.compute_cost)}",
        f"mean_profile_feature_cost: {_fmt(obj.mean_feature_cost)}",
        f"nodes: {sum(t.n_nodes for t in pruned.trees)} of {sum(t.n_nodes for t in forest.trees)}",
    ]
    if report is not None:
        lines += [f"dual_bound: {_fmt(report.dual)}", f"gap: {_fmt(report.gap)}",
                  f"relative_gap: {_fmt(report.rel_gap)}", f"iterations: {report.iterations}",
                  f"converged: {str(report.converged).lower()}"]
    if args.test is not None:
        test = _load(args.test, forest, args.label)
        ev = evaluate(forest, test.X, test.y, costs, z)
        lines += [f"test_error: {_fmt(ev.error_rate)}", f"test_mean_cost: {_fmt(ev.mean_cost)}",
                  f"test_mean_unique_features: {_fmt(ev.mean_unique_features)}"]
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    forest, profiles, costs = _context(args)
    knobs = _knobs(args, single=False)
    if args.test is None:
        raise CliError("--test is required for sweep")
    test = _load(args.test, forest, args.label)
    seqs = [ccp(t) for t in forest.trees] if args.method == "ccp" else None
    args.trace = None

    def point(knob):
        start = time.perf_counter()
        try:
            z, report = _run_method(args.method, knob, forest, profiles, costs, args, seqs)
        except (BudgetExceededError, ValueError, ArithmeticError) as exc:
            log.warning("knob %s failed: %s", knob, exc)
            return {"knob": knob}
        problem = build_problem(forest, profiles, costs, 0.0, args.compute_cost)
        obj = objective(problem, assignment_from_z(problem, z))
        ev = evaluate(forest, test.X, test.y, costs, z)
        return {"knob": knob, "cost": ev.mean_cost, "test_error": ev.error_rate,
                "train_error": obj.error, "feature_cost_term": obj.mean_feature_cost,
                "gap": None if report is None else report.gap,
                "seconds": time.perf_counter() - start}

    if args.parallel:
        with ThreadPoolExecutor(default_jobs()) as pool:
            rows = list(pool.map(point, knobs))
    else:
        rows = [point(k) for k in knobs]
    out = _out_dir(args)
    io.write_curve(rows, out / "curve.csv")
    print(f"{len(rows)} points -> {out / 'curve.csv'}")
    return 0


def cmd_eval(args) -> int:
    if args.model is None or args.test is None:
        raise CliError("eval needs --model and --test")
    forest = io.load_forest(args.model)
    test = _load(args.test, forest, args.label)
    ev = evaluate(forest, test.X, test.y, _costs(args, forest.num_features))
    text = (f"error: {_fmt(ev.error_rate)}\nmean_cost: {_fmt(ev.mean_cost)}\n"
            f"mean_unique_features: {_fmt(ev.mean_unique_features)}\n")
    sys.stdout.write(text)
    if args.out:
        (_out_dir(args) / "eval.txt").write_text(text)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks()
    for r in results:
        print(r.line())
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed} passed, {failed} failed")
    return 0 if failed == 0 else 1


COMMANDS = {"train": cmd_train, "prune": cmd_prune, "sweep": cmd_sweep,
            "eval": cmd_eval, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="budgetprune",
                                description="Prune random forests under feature acquisition costs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--data", help="training data (CSV or svmlight)")
        sp.add_argument("--valid", help="profile data for pruning (defaults to --data)")
        sp.add_argument("--test", help="test data")
        sp.add_argument("--label", help="label column of CSV files")
        sp.add_argument("--costs", help="cost file: feature_index,cost[,group_id]")
        sp.add_argument("--model", help="forest JSON")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--parallel", action="store_true", help="use up to BP_THREADS workers")

    def pruning(sp):
        sp.add_argument("--method", choices=METHODS, default="budget")
        sp.add_argument("--lambda", dest="lam", type=float, action="append", default=[])
        sp.add_argument("--alpha", type=float, action="append", default=[])
        sp.add_argument("--tau", type=float, action="append", default=[])
        sp.add_argument("--gap-tol", type=float, default=1e-3)
        sp.add_argument("--max-iters", type=int, default=500)
        sp.add_argument("--step", type=float, default=1.0)
        sp.add_argument("--schedule", choices=SCHEDULES, default="sqrt")
        sp.add_argument("--compute-cost", action="store_true",
                        help="add the per-node evaluation cost term")
        sp.add_argument("--dump-solution", action="store_true",
                        help="also write the usage variables to solution.json")
        sp.add_argument("--trace", help="write the solver trace CSV here")

    sp = sub.add_parser("train", help="grow an entropy random forest")
    common(sp)
    sp.add_argument("--trees", type=int, default=10)
    sp.add_argument("--max-depth", type=int)
    sp.add_argument("--feature-subset", type=int, help="features tried per split (default: all)")
    sp.add_argument("--seed", type=int, default=0)
    for name in ("prune", "sweep"):
        sp = sub.add_parser(name, help=f"{name} a trained forest")
        common(sp)
        pruning(sp)
    sp = sub.add_parser("eval", help="evaluate a (pruned) forest")
    common(sp)
    sub.add_parser("verify", help="run the built-in correctness checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, io.FormatError, BudgetExceededError) as exc:
        print(f"budgetprune {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
