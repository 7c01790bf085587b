from __future__ import annotations

import csv
import json

import pytest

from trajpace import GridConfig, Portfolio, build_tree, lattice_tree
from trajpace.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def one_step_file(tmp_path, one_step):
    f = tmp_path / "t.json"
    f.write_text(one_step.to_json())
    return str(f)


@pytest.fixture
def grid_cfg_file(tmp_path):
    f = tmp_path / "grid.json"
    f.write_text(json.dumps(GridConfig(1.0, 0.1, 1.0, 1, 2, 2, (2,), c=2.0).to_dict()))
    return str(f)


def test_price_example(capsys, one_step_file):
    code, rep = _run(capsys, "price", "--tree", one_step_file, "--payoff", "call:K=1", "--anchor", "0")
    assert code == 0 and rep["exit_code"] == 0
    assert rep["results"]["lower"] == pytest.approx(0.0, abs=1e-12)
    assert rep["results"]["upper"] == pytest.approx(0.05, abs=1e-12)
    assert set(rep) == {"command", "input_digests", "results", "wall_time", "exit_code"}


def test_price_constant(capsys, one_step_file):
    _, rep = _run(capsys, "price", "--tree", one_step_file, "--payoff", "const:c=3")
    assert rep["results"]["lower"] == 3.0 and rep["results"]["upper"] == 3.0


def test_classify_binomial(capsys, tmp_path):
    f = tmp_path / "b.json"
    f.write_text(lattice_tree(100.0, [1.2, 0.8], 2).to_json())
    _, rep = _run(capsys, "classify", "--tree", str(f))
    r = rep["results"]
    assert r["counts"]["UpDown"] == 3 and r["counts"]["ArbitrageNode"] == 0
    assert r["locally_arbitrage_free"] is True


def test_not_zero_neutral_prints_infinities(capsys, tmp_path):
    f = tmp_path / "n.json"
    f.write_text(build_tree([[1.0, 1.05], [1.0, 1.1]]).to_json())
    _, rep = _run(capsys, "price", "--tree", str(f), "--payoff", "call:K=1")
    assert rep["results"]["upper"] == "-inf" and rep["results"]["lower"] == "+inf"
    _, rep = _run(capsys, "arbitrage", "--tree", str(f))
    assert rep["results"]["arbitrage"] is True
    assert rep["results"]["strategy"]["holdings"]


def test_usage_and_input_errors(capsys, tmp_path, one_step_file):
    assert main(["nonsense"]) == 2
    assert main(["price", "--tree", one_step_file]) == 2
    code, rep = _run(capsys, "price", "--tree", str(tmp_path / "missing.json"), "--payoff", "call:K=1")
    assert code == 2 and rep["exit_code"] == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"s0": 1.0, "nodes": [{"id": 0, "price": 1.0}]}))
    code, rep = _run(capsys, "classify", "--tree", str(bad))
    assert code == 2 and "parent" in rep["results"]["message"]
    code, _ = _run(capsys, "price", "--tree", one_step_file, "--payoff", "swap:K=1")
    assert code == 2
    code, _ = _run(capsys, "price", "--tree", one_step_file, "--payoff", "call:K=1",
                   "--constraint", "interval:1,2")
    assert code == 2


def test_build_and_reuse_report(capsys, tmp_path, grid_cfg_file):
    out = tmp_path / "rep.json"
    csv_path = tmp_path / "paths.csv"
    assert main(["build", "--config", grid_cfg_file, "--out", str(out), "--emit-paths", str(csv_path)]) == 0
    rep = json.loads(out.read_text())
    n = rep["results"]["paths"]
    rows = list(csv.DictReader(open(csv_path)))
    assert len({r["path"] for r in rows}) == n
    # a report carrying a tree can be fed back in
    code, rep2 = _run(capsys, "classify", "--tree", str(out))
    assert code == 0 and rep2["results"]["counts"]


def test_sample_deterministic(capsys, tmp_path, grid_cfg_file):
    _, a = _run(capsys, "sample", "--config", grid_cfg_file, "--n-paths", "20", "--seed", "4")
    _, b = _run(capsys, "sample", "--config", grid_cfg_file, "--n-paths", "20", "--seed", "4")
    a.pop("wall_time"), b.pop("wall_time")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_sample_mart_and_stopped(capsys, tmp_path):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"model": "binomial", "T": 3, "exhaustive": True}))
    tree = tmp_path / "mt.json"
    code, rep = _run(capsys, "sample-mart", "--config", str(cfg), "--save-tree", str(tree))
    assert code == 0 and rep["results"]["paths"] == 8
    code, rep = _run(capsys, "stopped", "--tree", str(tree), "--horizon", "fixed:1")
    assert code == 0 and rep["results"]["paths"] == 2
    assert rep["results"]["locally_arbitrage_free"] is True
    spec = tmp_path / "h.json"
    spec.write_text(json.dumps({"kind": "fixed", "depth": 2}))
    code, rep = _run(capsys, "stopped", "--tree", str(tree), "--horizon", f"spec:{spec}")
    assert rep["results"]["paths"] == 4


def test_ingest(capsys, tmp_path):
    chart = tmp_path / "c.csv"
    chart.write_text("t,v\n0,1.0\n1,1.05\n2,0.98\n")
    cfg = tmp_path / "g.toml"
    cfg.write_text("s0 = 1.0\ndelta = 0.01\nbeta = 0.01\np = 10\nN1 = 100\nN2 = 1000\nLambda = [1000]\n")
    code, rep = _run(capsys, "ingest", "--chart", str(chart), "--config", str(cfg))
    assert code == 0 and rep["results"]["trajectory"]["k"] == [0, 5, -2]


def test_hedge_and_contrarian(capsys, tmp_path, one_step_file):
    _, rep = _run(capsys, "hedge", "--tree", one_step_file, "--payoff", "call:K=1")
    r = rep["results"]
    assert r["upper_hedge"]["holdings"]["0"] == pytest.approx(0.5)
    assert r["attainability"]["attainable"] is False
    pf = tmp_path / "p.json"
    pf.write_text(json.dumps(Portfolio({0: 1.0}).to_dict()))
    code, rep = _run(capsys, "contrarian", "--tree", one_step_file, "--portfolio", str(pf),
                     "--epsilon", "0.001")
    assert code == 0 and rep["results"]["achieved_gain"] == pytest.approx(-0.1)


def test_contrarian_absent_is_domain_failure(capsys, tmp_path):
    f = tmp_path / "n.json"
    f.write_text(build_tree([[1.0, 1.05], [1.0, 1.1]]).to_json())
    pf = tmp_path / "p.json"
    pf.write_text(json.dumps(Portfolio({0: 1.0}).to_dict()))
    code, rep = _run(capsys, "contrarian", "--tree", str(f), "--portfolio", str(pf), "--epsilon", "0.01")
    assert code == 1 and rep["results"]["found"] is False
    assert rep["results"]["local_arbitrage_nodes"] == [0]


def test_budget_exceeded_exit_code(capsys, tmp_path):
    f = tmp_path / "b.json"
    f.write_text(lattice_tree(1.0, [1.1, 1.0, 0.9], 3).to_json())
    code, rep = _run(capsys, "arbitrage", "--tree", str(f), "--constraint", "grid:0.25,2", "--budget", "100")
    assert code == 1 and rep["results"]["error"] == "BudgetExceeded"


def test_verify_commands(capsys):
    code, rep = _run(capsys, "verify", "optional-sampling", "--seed", "7", "--cases", "100")
    assert code == 0 and rep["results"]["passed"] == 100
    code, rep = _run(capsys, "verify", "duality", "--cases", "20")
    assert code == 0 and all(r["max_residual"] == 0.0 for r in rep["results"]["results"])
    code, rep = _run(capsys, "verify", "oracle-agreement", "--depth", "3", "--cases", "10")
    assert code == 0 and rep["results"]["failed"] == 0


def test_verify_reports_are_reproducible(capsys):
    _, a = _run(capsys, "verify", "contrarian", "--seed", "3", "--cases", "10")
    _, b = _run(capsys, "verify", "contrarian", "--seed", "3", "--cases", "10")
    a.pop("wall_time"), b.pop("wall_time")
    assert a == b


def test_errors_give_one_line_diagnostic(capsys, one_step_file):
    assert main(["price", "--tree", one_step_file, "--payoff", "swap:K=1"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("trajpace: ")
