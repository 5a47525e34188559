import hashlib
import json

import numpy as np
import pytest

from budgetprune import cli, fixtures, io
from budgetprune.forest import CostModel, Forest, build_profiles, evaluate
from budgetprune.model import build_problem
from budgetprune.oracle import brute_force, random_instance


def write_csv(path, X, y, classes=None):
    K = X.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join([f"f{k}" for k in range(K)] + ["label"]) + "\n")
        for x, l in zip(X.tolist(), y.tolist()):
            fh.write(",".join(repr(v) for v in x) + "," + (classes[l] if classes else str(l)) + "\n")
    return str(path)


@pytest.fixture
def data(tmp_path, rng):
    paths = {}
    for name, n in (("train", 120), ("valid", 80), ("test", 80)):
        X = rng.normal(size=(n, 4))
        y = (X[:, 0] + 0.5 * X[:, 1] + 0.3 * rng.normal(size=n) > 0).astype(int)
        paths[name] = write_csv(tmp_path / f"{name}.csv", X, y, ["no", "yes"])
    return paths


@pytest.fixture
def model(tmp_path, data):
    assert cli.main(["train", "--data", data["train"], "--trees", "4", "--max-depth", "5",
                     "--seed", "3", "--out", str(tmp_path / "m")]) == 0
    return str(tmp_path / "m" / "model.json")


def digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestTrain:
    def test_outputs(self, model, tmp_path):
        f = io.load_forest(model)
        assert len(f.trees) == 4 and f.classes == ["no", "yes"]
        assert (tmp_path / "m" / "stats.json").exists()
        assert io.dumps_forest(f) == open(model).read()

    def test_same_seed_same_bytes(self, data, tmp_path, model):
        out = tmp_path / "again"
        cli.main(["train", "--data", data["train"], "--trees", "4", "--max-depth", "5",
                  "--seed", "3", "--out", str(out)])
        assert digest(out / "model.json") == digest(model)
        assert digest(out / "stats.json") == digest(tmp_path / "m" / "stats.json")

    def test_parallel_same_bytes(self, data, tmp_path, model, monkeypatch):
        monkeypatch.setenv("BP_THREADS", "3")
        out = tmp_path / "par"
        cli.main(["train", "--data", data["train"], "--trees", "4", "--max-depth", "5",
                  "--seed", "3", "--parallel", "--out", str(out)])
        assert digest(out / "model.json") == digest(model)

    def test_missing_data(self, tmp_path, capsys):
        assert cli.main(["train", "--data", str(tmp_path / "nope.csv")]) == 2
        assert "no such file" in capsys.readouterr().err


class TestPrune:
    def test_lambda_zero_keeps_forest(self, model, data, tmp_path):
        out = tmp_path / "p"
        assert cli.main(["prune", "--model", model, "--valid", data["valid"],
                         "--lambda", "0", "--out", str(out)]) == 0
        a, b = io.load_forest(model), io.load_forest(out / "pruned_model.json")
        assert all(s == t for s, t in zip(a.trees, b.trees))
        assert "converged: true" in (out / "report.txt").read_text()

    def test_ccp_infinite_alpha(self, model, data, tmp_path):
        out = tmp_path / "p"
        assert cli.main(["prune", "--model", model, "--valid", data["valid"], "--method", "ccp",
                         "--alpha", "inf", "--out", str(out)]) == 0
        assert all(t.n_nodes == 1 for t in io.load_forest(out / "pruned_model.json").trees)

    @pytest.mark.parametrize("method,flag", [("greedy", "--lambda"), ("stop", "--tau")])
    def test_other_methods(self, model, data, tmp_path, method, flag):
        out = tmp_path / "p"
        assert cli.main(["prune", "--model", model, "--valid", data["valid"], "--test", data["test"],
                         "--method", method, flag, "0.3", "--out", str(out)]) == 0
        report = (out / "report.txt").read_text()
        assert f"method: {method}" in report and "test_error:" in report

    def test_ens2_matches_oracle(self, tmp_path):
        f = fixtures.ens2_forest()
        f = Forest(f.trees, 3, 3, ["0", "1", "2"])
        io.save_forest(f, tmp_path / "ens2.json")
        valid = write_csv(tmp_path / "v.csv", fixtures.ENS2_X, np.array([0]))
        out = tmp_path / "p"
        assert cli.main(["prune", "--model", str(tmp_path / "ens2.json"), "--valid", valid,
                         "--lambda", "0.5", "--dump-solution", "--out", str(out)]) == 0
        report = dict(line.split(": ") for line in (out / "report.txt").read_text().splitlines())
        assert float(report["objective"]) == pytest.approx(8 / 15, rel=1e-2)
        sol = json.loads((out / "solution.json").read_text())
        assert sol["z"] == [[0, 0], [1, 0]] and "w_global" in sol

    def test_solution_without_dump(self, model, data, tmp_path):
        out = tmp_path / "p"
        cli.main(["prune", "--model", model, "--valid", data["valid"], "--lambda", "0.1",
                  "--out", str(out)])
        sol = json.loads((out / "solution.json").read_text())
        assert set(sol) == {"z", "method", "knob"}

    def test_trace(self, model, data, tmp_path):
        trace = tmp_path / "trace.csv"
        cli.main(["prune", "--model", model, "--valid", data["valid"], "--lambda", "0.1",
                  "--trace", str(trace), "--out", str(tmp_path / "p")])
        assert trace.read_text().startswith("iter,primal,dual,gap,step\n")

    def test_costs_and_compute_term(self, model, data, tmp_path):
        costs = tmp_path / "c.csv"
        costs.write_text("0,1\n1,1\n2,0.5\n3,3\n")
        out = tmp_path / "p"
        assert cli.main(["prune", "--model", model, "--valid", data["valid"], "--costs", str(costs),
                         "--lambda", "0.05", "--compute-cost", "--out", str(out)]) == 0
        report = (out / "report.txt").read_text()
        assert "compute_cost_term: 0.0\n" not in report

    def test_unknown_method(self, model, data):
        with pytest.raises(SystemExit) as exc:
            cli.main(["prune", "--model", model, "--valid", data["valid"], "--method", "magic"])
        assert exc.value.code == 2

    def test_missing_knob(self, model, data, capsys):
        assert cli.main(["prune", "--model", model, "--valid", data["valid"], "--method", "ccp"]) == 2
        assert "--alpha" in capsys.readouterr().err

    def test_two_knobs_rejected(self, model, data):
        assert cli.main(["prune", "--model", model, "--valid", data["valid"],
                         "--lambda", "0.1", "--lambda", "0.2"]) == 2


class TestSweep:
    def test_lambda_zero_row(self, model, data, tmp_path):
        out = tmp_path / "s"
        assert cli.main(["sweep", "--model", model, "--valid", data["valid"], "--test", data["test"],
                         "--lambda", "0", "--out", str(out)]) == 0
        rows = io.read_curve(out / "curve.csv")
        assert len(rows) == 1
        f = io.load_forest(model)
        test = io.load_dataset(data["test"], classes=f.classes)
        ev = evaluate(f, test.X, test.y)
        assert float(rows[0]["test_error"]) == ev.error_rate
        assert float(rows[0]["cost"]) == ev.mean_cost

    def test_rows_in_grid_order(self, model, data, tmp_path):
        out = tmp_path / "s"
        cli.main(["sweep", "--model", model, "--valid", data["valid"], "--test", data["test"],
                  "--lambda", "1", "--lambda", "0", "--lambda", "0.1", "--out", str(out)])
        assert [r["knob"] for r in io.read_curve(out / "curve.csv")] == ["1.0", "0.0", "0.1"]

    @pytest.mark.parametrize("method,flag,values", [
        ("ccp", "--alpha", ["0", "2", "inf"]), ("stop", "--tau", ["0", "0.5", "1"]),
        ("greedy", "--lambda", ["0.01", "0.5"])])
    def test_baseline_sweeps(self, model, data, tmp_path, method, flag, values):
        out = tmp_path / "s"
        args = ["sweep", "--model", model, "--valid", data["valid"], "--test", data["test"],
                "--method", method, "--out", str(out)]
        for v in values:
            args += [flag, v]
        assert cli.main(args) == 0
        rows = io.read_curve(out / "curve.csv")
        assert len(rows) == len(values) and all(r["gap"] == "" for r in rows)
        for r in rows:
            assert 0 <= float(r["test_error"]) <= 1 and float(r["cost"]) >= 0

    def test_parallel_matches_sequential(self, model, data, tmp_path, monkeypatch):
        monkeypatch.setenv("BP_THREADS", "2")
        common = ["sweep", "--model", model, "--valid", data["valid"], "--test", data["test"],
                  "--lambda", "0", "--lambda", "0.05", "--lambda", "0.5"]
        cli.main(common + ["--out", str(tmp_path / "a")])
        cli.main(common + ["--parallel", "--out", str(tmp_path / "b")])
        strip = lambda rows: [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
        assert strip(io.read_curve(tmp_path / "a" / "curve.csv")) == \
            strip(io.read_curve(tmp_path / "b" / "curve.csv"))

    def test_cost_non_increasing_on_oracle_fixture(self, tmp_path):
        rng = np.random.default_rng(21)
        inst = random_instance(rng, max_trees=3, max_depth=3)
        f = Forest(inst.forest.trees, inst.forest.num_features, 2, ["0", "1"])
        io.save_forest(f, tmp_path / "m.json")
        csv_path = write_csv(tmp_path / "d.csv", inst.X, inst.y)
        grid = [0.0, 0.05, 0.2, 1.0, 5.0]
        args = ["sweep", "--model", str(tmp_path / "m.json"), "--valid", csv_path, "--test", csv_path,
                "--out", str(tmp_path / "s")]
        for lam in grid:
            args += ["--lambda", str(lam)]
        assert cli.main(args) == 0
        rows = io.read_curve(tmp_path / "s" / "curve.csv")
        got = [float(r["feature_cost_term"]) for r in rows]
        profiles = build_profiles(f, inst.X, inst.y)
        exact = [brute_force(build_problem(f, profiles, CostModel.uniform(f.num_features), lam))
                 for lam in grid]
        assert all(b <= a + 1e-12 for a, b in zip(got, got[1:]))
        expected = [e.mean_feature_cost for e in exact]
        assert all(b <= a + 1e-12 for a, b in zip(expected, expected[1:]))

    def test_needs_test_set(self, model, data):
        assert cli.main(["sweep", "--model", model, "--valid", data["valid"], "--lambda", "0"]) == 2


class TestEval:
    def test_prints_metrics(self, model, data, capsys, tmp_path):
        assert cli.main(["eval", "--model", model, "--test", data["test"], "--out", str(tmp_path / "e")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("error: ") and "mean_unique_features" in out
        assert (tmp_path / "e" / "eval.txt").read_text() == out


class TestVerify:
    def test_passes(self, capsys):
        assert cli.main(["verify"]) == 0
        first = capsys.readouterr().out
        assert "FAIL" not in first and first.count("PASS") == 9
        cli.main(["verify"])
        assert capsys.readouterr().out == first

    def test_corrupted_matrix(self, monkeypatch, capsys):
        bad = fixtures.TREE_A_NETWORK.copy()
        bad[0, 0] = 1
        monkeypatch.setattr(fixtures, "TREE_A_NETWORK", bad)
        assert cli.main(["verify"]) == 1
        out = capsys.readouterr().out
        assert "FAIL tree_a_network_matrix" in out
