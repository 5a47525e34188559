"""Self-checks run by ``budgetprune verify``.

Every check is deterministic; the expected matrices are looked up on the
:mod:`budgetprune.fixtures` module at call time, so a corrupted fixture
makes the matching check fail by name.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import fixtures
from .forest import CostModel, build_profiles
from .model import build_problem, constraint_matrix
from .oracle import (brute_force, check_network_column_property, naive_counterexample,
                     random_instance, tu_spot_check)
from .pathgraph import augment, constraint_rows, network_matrix
from .solver import SolverOptions, solve


class CheckResult(NamedTuple):
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


def _tree_a_aug():
    forest = fixtures.tree_a_forest()
    problem = build_problem(forest, build_profiles(forest, fixtures.TREE_A_X))
    return augment(forest.trees[0], problem.tree_uses(0))


def _ens2_problem(lam=0.5):
    forest = fixtures.ens2_forest()
    return build_problem(forest, build_profiles(forest, fixtures.ENS2_X),
                         CostModel.uniform(forest.num_features), lam)


def _ens2_tree2_aug():
    problem = _ens2_problem()
    return augment(problem.forest.trees[1], problem.tree_uses(1))


def _same(actual, expected):
    actual, expected = np.asarray(actual), np.asarray(expected)
    if actual.shape != expected.shape:
        return False, f"shape {actual.shape} != {expected.shape}"
    bad = np.argwhere(actual != expected)
    if len(bad):
        r, c = bad[0]
        return False, f"entry ({r}, {c}) is {actual[r, c]}, expected {expected[r, c]}"
    return True, ""


def check_tree_a_network():
    return _same(network_matrix(_tree_a_aug()).values, fixtures.TREE_A_NETWORK)


def check_tree_a_rows():
    return _same(constraint_rows(_tree_a_aug()), fixtures.TREE_A_ROWS)


def check_ens2_network():
    return _same(network_matrix(_ens2_tree2_aug()).values, fixtures.ENS2_TREE2_NETWORK)


def check_ens2_rows():
    return _same(constraint_rows(_ens2_tree2_aug()), fixtures.ENS2_TREE2_ROWS)


def check_column_property():
    for name, m in (("tree A", fixtures.TREE_A_NETWORK), ("ENS-2 tree 2", fixtures.ENS2_TREE2_NETWORK)):
        if not check_network_column_property(m):
            return False, f"{name} matrix is not a network matrix"
    for name, m in (("tree A", fixtures.TREE_A_ROWS), ("ENS-2 tree 2", fixtures.ENS2_TREE2_ROWS)):
        if check_network_column_property(m):
            return False, f"{name} path rows already look like a network matrix"
    return True, ""


def check_unimodularity():
    A, _, _ = constraint_matrix(_ens2_problem())
    rep = tu_spot_check(A, max_order=6, samples=1000, seed=0)
    return rep.ok, f"{rep.checked} submatrices" if rep.ok else f"det {rep.counterexample}"


def check_naive_counterexample():
    rep = naive_counterexample()
    return rep.ok, "" if rep.ok else str(rep)


def check_ens2_optimum():
    problem = _ens2_problem(0.5)
    exact = brute_force(problem)
    if abs(exact.objective - 8 / 15) > 1e-12:
        return False, f"brute force gives {exact.objective!r}, expected 8/15"
    got = solve(problem, SolverOptions())
    if got.primal > exact.objective * 1.01 + 1e-12:
        return False, f"solver {got.primal!r} vs optimum {exact.objective!r}"
    return True, f"objective {got.primal:.6g}"


def check_random_oracle(n=20, seed=0):
    rng = np.random.default_rng(seed)
    for j in range(n):
        inst = random_instance(rng)
        problem = inst.problem()
        exact = brute_force(problem)
        got = solve(problem, SolverOptions())
        if got.primal > exact.objective + 0.01 * abs(exact.objective) + 1e-12:
            return False, f"instance {j}: solver {got.primal!r} vs optimum {exact.objective!r}"
        if got.dual > exact.objective + 1e-9:
            return False, f"instance {j}: dual bound {got.dual!r} exceeds optimum {exact.objective!r}"
    return True, f"{n} instances"


CHECKS: list[tuple[str, Callable]] = [
    ("tree_a_network_matrix", check_tree_a_network),
    ("tree_a_path_rows", check_tree_a_rows),
    ("ens2_tree2_network_matrix", check_ens2_network),
    ("ens2_tree2_path_rows", check_ens2_rows),
    ("network_column_property", check_column_property),
    ("unimodularity_spot_check", check_unimodularity),
    ("naive_fractional_vertex", check_naive_counterexample),
    ("ens2_optimum", check_ens2_optimum),
    ("random_oracle_agreement", check_random_oracle),
]


def run_checks() -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
