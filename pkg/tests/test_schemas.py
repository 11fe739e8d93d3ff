"""输入文件模式的校验与出错位置"""
import json

import pytest

from modcsp.exceptions import StructureError
from modcsp.schemas import (
    GraphFile, InstanceFile, MatrixFile, RunConfig, StructureFile, load_file, parse_model, read_json,
)


def test_numbers_are_coerced_to_text():
    payload = {"sorts": [{"name": "D", "elements": [0, 1]}],
               "relations": [{"name": "R", "type": ["D", "D"], "tuples": [[0, 1], [1, 0]]}]}
    structure = parse_model(StructureFile, payload).to_structure()
    assert structure.elements("D") == ("0", "1")
    assert structure.relation("R").tuples == (("0", "1"), ("1", "0"))


def test_instance_is_checked_against_structure():
    structure = parse_model(StructureFile, {"sorts": [{"name": "D", "elements": ["0"]}],
                                            "relations": [{"name": "R", "type": ["D"], "tuples": [["0"]]}]}
                            ).to_structure()
    good = parse_model(InstanceFile, {"variables": [{"name": "x", "sort": "D"}],
                                      "constraints": [{"relation": "R", "scope": ["x"]}]})
    assert good.to_instance(structure).variable_names == ("x",)
    bad = parse_model(InstanceFile, {"variables": [{"name": "x", "sort": "D"}],
                                     "constraints": [{"relation": "S", "scope": ["x"]}]})
    with pytest.raises(StructureError):
        bad.to_instance(structure)


def test_matrix_modulus_must_be_prime():
    assert parse_model(MatrixFile, {"p": 5, "rows": [[1]]}).p == 5
    with pytest.raises(StructureError) as info:
        parse_model(MatrixFile, {"p": 9, "rows": [[1]]}, "m.json")
    assert info.value.location == "m.json:p"


def test_graph_edges_are_pairs():
    with pytest.raises(StructureError) as info:
        parse_model(GraphFile, {"n": 2, "edges": [[0, 1, 1]]}, "g.json")
    assert info.value.location.startswith("g.json:edges")
    with pytest.raises(StructureError):
        parse_model(GraphFile, {"n": -1})


def test_missing_field_location():
    with pytest.raises(StructureError) as info:
        parse_model(StructureFile, {"relations": []}, "h.json")
    assert info.value.location == "h.json:sorts"


def test_run_config_overrides():
    config = parse_model(RunConfig, {"command": "closure", "modulus": 3, "budget_atoms": 2})
    assert config.closure_overrides()["max_atoms"] == 2
    assert config.closure_overrides()["max_depth"] is None
    assert config.gadget_overrides() == {"max_vertices": None}
    with pytest.raises(StructureError):
        parse_model(RunConfig, {"command": "closure", "modulus": 1})
    with pytest.raises(StructureError):
        parse_model(RunConfig, {"command": "closure", "budget_relations": 0})


def test_read_json_errors(tmp_path):
    with pytest.raises(StructureError):
        read_json(str(tmp_path / "absent.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{\"sorts\": [", encoding="utf-8")
    with pytest.raises(StructureError) as info:
        load_file(StructureFile, str(broken))
    assert info.value.location.startswith(str(broken))
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"sorts": [{"name": "D", "elements": ["a"]}]}), encoding="utf-8")
    assert load_file(StructureFile, str(ok)).to_structure().total_size == 1
