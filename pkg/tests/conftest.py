import numpy as np
import pytest

from budgetprune import fixtures
from budgetprune.forest import CostModel, build_profiles
from budgetprune.model import build_problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ens2_problem():
    def make(lam=0.5, cost_model=None):
        forest = fixtures.ens2_forest()
        profiles = build_profiles(forest, fixtures.ENS2_X)
        return build_problem(forest, profiles, cost_model or CostModel.uniform(3), lam)
    return make


@pytest.fixture
def tree_a_problem():
    def make(lam=1.0):
        forest = fixtures.tree_a_forest()
        profiles = build_profiles(forest, fixtures.TREE_A_X)
        return build_problem(forest, profiles, CostModel.uniform(2), lam)
    return make


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
