"""自同构、p-刚性约化与 M-自同构的测试"""
import pytest

from modcsp.autos import (
    StabilizerQuery, automorphisms, is_automorphism_stable, is_p_rigid, m_automorphisms, p_automorphisms,
    p_rigid_reduce, stab,
)
from modcsp.exceptions import GuardExceeded, ModulusError
from modcsp.fixtures import load_structure, random_instance
from modcsp.homcount import count_homs_mod
from modcsp.structures import MultiSortedStructure, Relation, Sort


def k3() -> MultiSortedStructure:
    elements = ("0", "1", "2")
    rows = tuple((a, b) for a in elements for b in elements if a != b)
    return MultiSortedStructure.create([Sort("D", elements)], [Relation("E", ("D", "D"), rows)])


def test_neq2_automorphisms():
    autos = automorphisms(load_structure("neq2"))
    assert [a.order for a in autos] == [1, 2]
    assert autos[0].mapping.is_identity()
    assert autos[1].apply("D", "0") == "1"


def test_p_automorphisms_filter_by_order():
    h = k3()
    assert len(automorphisms(h)) == 6
    assert len(p_automorphisms(h, 2)) == 3
    assert len(p_automorphisms(h, 3)) == 2
    assert p_automorphisms(h, 5) == []
    with pytest.raises(ModulusError):
        p_automorphisms(h, 6)


def test_rigid_reduce_neq2_empties_structure():
    reduced, chain = p_rigid_reduce(load_structure("neq2"), 2)
    assert reduced.total_size == 0
    assert len(chain) == 1
    assert chain[0].order == 2


def test_rigid_reduce_k3():
    reduced, chain = p_rigid_reduce(k3(), 3)
    assert reduced.total_size == 0
    reduced, chain = p_rigid_reduce(k3(), 2)
    assert reduced.sort("D").elements == ("0",)
    assert is_p_rigid(reduced, 2)


@pytest.mark.parametrize("p", [2, 3])
@pytest.mark.parametrize("k", range(10))
def test_rigid_reduce_preserves_counts_mod_p(p, k):
    h = k3()
    reduced, _ = p_rigid_reduce(h, p)
    instance = random_instance(f"rigid_{p}_{k}", h, variables=1 + k % 4, constraints=k % 5)
    assert count_homs_mod(instance, h, p) == count_homs_mod(instance, reduced, p)


def test_rigid_reduce_pick_changes_survivor():
    reduced, _ = p_rigid_reduce(k3(), 2, pick=lambda autos: autos[-1])
    assert reduced.sort("D").size == 1
    assert reduced.sort("D").elements == ("1",)


def test_constants_make_structures_rigid():
    for name in ("le2c", "k3c", "le3c", "aff3"):
        assert is_p_rigid(load_structure(name), 2)


def test_automorphism_guard():
    h = MultiSortedStructure.create([Sort("D", tuple(str(i) for i in range(6)))], [])
    with pytest.raises(GuardExceeded):
        automorphisms(h, guard=100)


def test_stabilizer():
    h = k3()
    assert len(stab(StabilizerQuery(points=(("D", "0"),)), h)) == 2
    stable = frozenset({("D", "0"), ("D", "1")})
    fixing_pair = stab(StabilizerQuery(stable=stable), h)
    assert len(fixing_pair) == 2


def test_automorphism_stable_witness():
    h = load_structure("neq2")
    assert is_automorphism_stable({("D", "0"), ("D", "1")}, h) == ("D", "0")
    # 只含 0 时 {π : π(0) = 0} 只有恒等映射，仍是子群
    assert is_automorphism_stable({("D", "0")}, h) == ("D", "0")


def test_m_automorphisms_contain_identity():
    found = m_automorphisms(load_structure("affine2c"), 2)
    assert any(g.order == 1 for g in found)
    assert all(g.order in (1, 2) for g in found)
    identity = next(g for g in found if g.order == 1)
    assert identity.image("D", ("0", "1", "1")) == ("0", "1", "1")
