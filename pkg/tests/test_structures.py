"""多类别结构、实例与构造的测试"""
import pytest

from modcsp.exceptions import StructureError
from modcsp.fixtures import load_instance, load_structure
from modcsp.structures import (
    Constraint, CspInstance, MultiSortedStructure, Relation, Sort, add_constants, add_domains, expand,
    induced_substructure, instance_as_structure, power, product, spectrum, spectrum_less, structure_as_instance,
    structure_from_dict, validate_instance,
)


def test_relation_tuples_are_deduplicated_and_sorted():
    h = MultiSortedStructure.create([Sort("D", ("1", "0"))],
                                    [Relation("R", ("D", "D"), (("0", "0"), ("1", "0"), ("1", "0")))])
    assert h.relation("R").tuples == (("1", "0"), ("0", "0"))


def test_unknown_element_reports_location():
    with pytest.raises(StructureError) as exc:
        MultiSortedStructure.create([Sort("D", ("0", "1"))], [Relation("R", ("D",), (("2",),))])
    assert "relation R" in exc.value.location


def test_unknown_sort_in_relation_type():
    with pytest.raises(StructureError):
        MultiSortedStructure.create([Sort("D", ("0",))], [Relation("R", ("E",), ())])


def test_constants_flag_requires_constant_relations():
    with pytest.raises(StructureError):
        MultiSortedStructure.create([Sort("D", ("0", "1"))], [], True)


def test_add_constants_is_idempotent():
    h = load_structure("neq2")
    once = add_constants(h)
    assert once.constants_flag
    assert once.relation("c[D:1]").tuples == (("1",),)
    assert add_constants(once).to_dict() == once.to_dict()


def test_dict_round_trip_keeps_digest():
    h = load_structure("le2c_neq2c")
    assert structure_from_dict(h.to_dict()).digest() == h.digest()


def test_expand_rejects_name_clash():
    h = load_structure("neq2")
    with pytest.raises(StructureError):
        expand(h, [Relation("R", ("D",), (("0",),))])


def test_product_and_power_sizes():
    h = load_structure("neq2")
    assert product(h, h).sort("D").size == 4
    assert len(product(h, h).relation("R")) == 4
    cube = power(h, 3)
    assert cube.sort("D").size == 8
    assert len(cube.relation("R")) == 8


def test_spectrum_order():
    h = load_structure("le2c_neq2c")
    assert spectrum(h) == (0, 2)
    assert spectrum_less((3,), (0, 1))
    assert not spectrum_less((0, 1), (0, 1))


def test_induced_substructure_drops_constants_flag_when_shrunk():
    h = load_structure("le3c")
    sub = induced_substructure(h, {"D": ["0", "1"]})
    assert sub.sort("D").elements == ("0", "1")
    assert not sub.constants_flag
    assert sub.relation("c[D:2]").tuples == ()


def test_instance_validation():
    h = load_structure("neq2")
    good = load_instance("path3")
    assert validate_instance(good, h) is good
    bad = CspInstance((("x", "D"),), (Constraint("R", ("x",)),))
    with pytest.raises(StructureError) as exc:
        validate_instance(bad, h)
    assert exc.value.location == "constraint 0"


def test_structure_instance_views_are_inverse():
    h = load_structure("neq2")
    instance = load_instance("path3")
    g = instance_as_structure(instance, h)
    assert g.sort("D").elements == ("x", "y", "z")
    assert structure_as_instance(g, h).constraints == instance.constraints


def test_add_domains_adds_full_unary():
    h = add_domains(load_structure("le3c"))
    assert h.relation("dom[D]").tuples == (("0",), ("1",), ("2",))
