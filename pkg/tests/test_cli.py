"""命令行入口：输出 JSON 与退出码"""
import json

import pytest

from config.paths import get_fixture_path
from modcsp.cli import EXIT_INPUT, EXIT_OK, EXIT_STUCK, main


def fx(name: str) -> str:
    return get_fixture_path(name)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_count(capsys):
    code, payload = run(capsys, "count", "--structure", fx("neq2"), "--instance", fx("edge"), "--mod", "2")
    assert code == EXIT_OK
    assert payload == {"count_mod_p": 0, "p": 2}
    code, payload = run(capsys, "count", "--structure", fx("neq2"), "--instance", fx("edge"))
    assert payload == {"count": 2}
    code, payload = run(capsys, "count", "--structure", fx("le2"), "--instance", fx("edge"), "--pin", "x=0")
    assert payload == {"count": 2}


def test_eval_matrix(capsys):
    code, payload = run(capsys, "eval-matrix", "--matrix", fx("eval_matrix_p3"), "--graph", fx("one_edge_graph"))
    assert code == EXIT_OK
    assert payload == {"p": 3, "value_mod_p": 0}


def test_polys_and_maltsev(capsys):
    code, payload = run(capsys, "polys", "--structure", fx("neq2"))
    assert code == EXIT_OK
    assert payload["count"] == 16
    code, payload = run(capsys, "maltsev", "--structure", fx("le2"))
    assert payload["has_maltsev"] is False
    code, payload = run(capsys, "maltsev", "--structure", fx("neq2"))
    assert payload["has_maltsev"] is True


def test_mpp_eval(capsys):
    code, payload = run(capsys, "mpp-eval", "--structure", fx("le2"), "--formula", fx("exists_neighbour"),
                        "--mod", "2")
    assert code == EXIT_OK
    assert payload["relation"]["tuples"] == [["1"]]
    assert payload["strict"] is True


def test_autos_with_rigid_reduce(capsys):
    code, payload = run(capsys, "autos", "--structure", fx("neq2"), "--mod", "2", "--rigid-reduce")
    assert code == EXIT_OK
    assert len(payload["automorphisms"]) == 1
    assert payload["rigid_reduce"]["structure"]["sorts"][0]["elements"] == []


def test_classify_then_verify(capsys, tmp_path):
    out = tmp_path / "verdict.json"
    code, _ = run(capsys, "classify", "--structure", fx("le2c"), "--mod", "2", "--output", str(out))
    assert code == EXIT_OK
    verdict = json.loads(out.read_text(encoding="utf-8"))
    assert verdict["verdict"] == "SharpPHard"
    assert verdict["certificate"]["terminal"] == [[0, 1], [1, 1]]

    cert = tmp_path / "cert.json"
    cert.write_text(json.dumps(verdict["certificate"]), encoding="utf-8")
    code, payload = run(capsys, "verify-cert", "--structure", fx("le2c"), "--cert", str(cert))
    assert code == EXIT_OK
    assert payload["ok"] is True

    code, payload = run(capsys, "verify-cert", "--structure", fx("le2c"), "--cert", str(cert), "--mod", "3")
    assert code == EXIT_STUCK
    assert payload["ok"] is False

    broken = dict(verdict["certificate"], terminal=[[1, 1], [1, 1]])
    cert.write_text(json.dumps(broken), encoding="utf-8")
    code, payload = run(capsys, "verify-cert", "--structure", fx("le2c"), "--cert", str(cert))
    assert code == EXIT_STUCK
    assert payload["divergence"]


def test_obstruction_command(capsys):
    code, payload = run(capsys, "obstruction", "--structure", fx("le2c"), "--mod", "2")
    assert code == EXIT_OK
    assert payload["kind"] == "obstruction"


@pytest.mark.parametrize("argv", [
    ["count", "--structure", "missing.json", "--instance", "missing.json"],
    ["count", "--structure", "NEQ2"],
    ["classify", "--structure", "NEQ2", "--mod", "4"],
    ["classify", "--structure", "NEQ2"],
    ["count", "--structure", "NEQ2", "--instance", "EDGE", "--pin", "x"],
    ["no-such-command"],
])
def test_input_errors(capsys, argv):
    argv = [fx("neq2") if a == "NEQ2" else fx("edge") if a == "EDGE" else a for a in argv]
    assert main(argv) == EXIT_INPUT
    assert capsys.readouterr().out == ""


def test_invalid_structure_file(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"sorts": [{"name": "D", "elements": [0, 1]}],
                                "relations": [{"name": "R", "type": ["E"], "tuples": [[0]]}]}), encoding="utf-8")
    assert main(["polys", "--structure", str(path)]) == EXIT_INPUT


def test_budget_flags_reach_closure(capsys):
    code, payload = run(capsys, "closure", "--structure", fx("le3c"), "--mod", "2", "--budget-relations", "5",
                        "--budget-atoms", "2", "--budget-depth", "1", "--budget-arity", "2")
    assert code == EXIT_OK
    assert payload["status"] == "budget-exhausted"
    assert len(payload["relations"]) == 5
    assert payload["budget"]["max_relations"] == 5
