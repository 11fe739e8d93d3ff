"""多态枚举、Mal'tsev 判定、项演算与 minority 构造的测试"""
import itertools

import pytest

from modcsp.exceptions import GuardExceeded, StructureError, TermError
from modcsp.fixtures import (
    all_maltsev_tables, binary_relation_structures, load_operation, load_structure, maltsev_of_types,
)
from modcsp.polyclone import (
    OperationTable, compose, enumerate_polymorphisms, eval_term, find_p_automorphic_polynomial, has_maltsev,
    indicator_coordinates, indicator_instance, is_rectangular, maltsev_criterion, minority_from_maltsev,
    operation_from_dict, p_automorphic_witness, parse_term, section_orders,
)


def xor3(sort, args):
    return str(int(args[0]) ^ int(args[1]) ^ int(args[2]))


def test_neq2_has_sixteen_ternary_polymorphisms():
    polys = enumerate_polymorphisms(load_structure("neq2"), 3)
    assert len(polys) == 16
    assert len(set(polys)) == 16
    flip = {"0": "1", "1": "0"}
    for f in polys:
        for args in itertools.product("01", repeat=3):
            assert f("D", *(flip[a] for a in args)) == flip[f("D", *args)]


def test_polymorphism_guard():
    with pytest.raises(GuardExceeded):
        enumerate_polymorphisms(load_structure("neq2"), 3, max_solutions=5)


def test_indicator_instance_shape():
    instance = indicator_instance(load_structure("neq2"), 3)
    assert len(instance.variables) == 8
    assert len(instance.constraints) == 8


def test_indicator_coordinates_partition_the_cube():
    coords = indicator_coordinates(load_structure("le3c"))
    assert len(coords.I) == 9
    assert len(coords.J) == 6
    assert len(coords.all) == 27
    assert len(set(coords.all)) == 27


def test_indicator_coordinates_two_elements():
    coords = indicator_coordinates(load_structure("le2c"))
    assert {t for _, t in coords.J} == {("0", "0", "1"), ("1", "1", "0")}
    assert coords.c == ("0", "1")
    assert coords.d == ("1", "0")


def test_maltsev_on_neq2_and_le2():
    assert has_maltsev(load_structure("neq2")) is not None
    assert has_maltsev(load_structure("le2")) is None
    assert maltsev_criterion(load_structure("neq2"))
    assert not maltsev_criterion(load_structure("le2"))


def test_maltsev_on_all_binary_two_element_structures():
    for h in binary_relation_structures():
        rows = h.relation("R").tuples
        found = has_maltsev(h)
        assert (found is not None) == (len(rows) != 3)
        assert maltsev_criterion(h) == (found is not None)
        if found is not None:
            assert found.is_maltsev()
            assert found.is_polymorphism_of(h)


def test_rectangularity():
    le = load_structure("le2").relation("R")
    violation = is_rectangular(le)
    assert violation is not None
    assert le.tuple_set >= {violation.a + violation.c, violation.a + violation.d, violation.b + violation.c}
    assert violation.b + violation.d not in le
    assert is_rectangular(load_structure("neq2").relation("R")) is None


def test_minority_from_every_maltsev_type_combination():
    tables = list(all_maltsev_tables(4))
    assert len(tables) == 4 + 16 + 64 + 256
    for m in tables:
        result = minority_from_maltsev(m)
        expected = OperationTable.from_function(m.domains, 3, xor3)
        assert result.minority == expected


def test_minority_types_follow_pattern():
    m = maltsev_of_types((0, 1, 2, 3))
    types = minority_from_maltsev(m).types
    assert types == {"S0": 0, "S1": 1, "S2": 2, "S3": 3}


def test_term_parsing_and_evaluation():
    term = parse_term("m(m(x,y,z),x,m(x,z,y))")
    assert str(term) == "m(m(x,y,z),x,m(x,z,y))"
    assert term.symbols() == {"m"}
    with pytest.raises(TermError):
        parse_term("m(x,y")
    with pytest.raises(TermError):
        parse_term("m(x,w,y)")
    with pytest.raises(TermError):
        parse_term("m(x,y,z) z")

    domains = {"D": ("0", "1")}
    minority = OperationTable.from_function(domains, 3, xor3)
    first = eval_term(parse_term("m(x,x,y)"), {"m": minority})
    assert first == OperationTable.projection(domains, 2, 1)
    with pytest.raises(TermError):
        eval_term(parse_term("g(x,y)"), {"m": minority})


def test_compose_with_projections_is_identity():
    domains = {"D": ("0", "1", "2")}
    f = OperationTable.from_function(domains, 3, lambda s, a: max(a))
    projections = [OperationTable.projection(domains, 3, k) for k in range(3)]
    assert compose(f, projections) == f
    with pytest.raises(TermError):
        compose(f, projections[:2])


def test_incomplete_table_is_rejected():
    with pytest.raises(StructureError):
        OperationTable(2, {"D": ("0", "1")}, {"D": {("0", "0"): "0"}})


def test_operation_dict_round_trip():
    h = load_structure("aff3")
    f = load_operation("aff3_poly", h)
    assert operation_from_dict(f.to_dict(), h.domains()) == f


def test_section_orders_of_automorphic_polynomial():
    h = load_structure("aff3")
    f = load_operation("aff3_poly", h)
    assert section_orders(f) == {("D", "0"): 1, ("D", "1"): 1, ("D", "2"): 2}
    assert p_automorphic_witness(f, 2) == ("D", "2")
    assert p_automorphic_witness(f, 3) is None
    assert f.is_polymorphism_of(h)


def test_find_automorphic_polynomial():
    h = load_structure("aff3")
    found = find_p_automorphic_polynomial(h, 2)
    assert found is not None
    assert found.witness == ("D", "2")
    assert found.operation == load_operation("aff3_poly", h)
    assert find_p_automorphic_polynomial(h, 3) is None
    # 两元素加常量：截面都是恒等，不存在自同构多项式
    assert find_p_automorphic_polynomial(load_structure("le2c"), 2) is None


def test_non_permutation_section():
    domains = {"D": ("0", "1")}
    f = OperationTable.from_function(domains, 2, lambda s, a: "0")
    assert section_orders(f) is None
    assert p_automorphic_witness(f, 2) is None


def test_every_binary_polymorphism_of_neq2_is_found():
    h = load_structure("neq2")
    polys = set(enumerate_polymorphisms(h, 2))
    brute = set()
    domains = h.domains()
    cube = list(itertools.product(("0", "1"), repeat=2))
    for values in itertools.product(("0", "1"), repeat=4):
        f = OperationTable(2, domains, {"D": dict(zip(cube, values))})
        if f.is_polymorphism_of(h):
            brute.add(f)
    assert polys == brute


def test_oversized_relation_is_recorded_as_skipped(caplog):
    h = load_structure("le2c")
    relation = h.relation("R")
    projection = OperationTable.projection(h.domains(), 3, 0)
    notes = []
    with caplog.at_level("WARNING"):
        assert projection.preserves(relation, max_tuples=0, skipped=notes) is None
        assert projection.preserves(relation, max_tuples=0, skipped=notes) is None
    assert len(notes) == 1
    assert "R" in notes[0]
    assert any("未检查保持性" in record.getMessage() for record in caplog.records)
    assert projection.preserves(relation, max_tuples=3, skipped=notes) is None
    assert len(notes) == 1
