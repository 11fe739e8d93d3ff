"""二元化、置换定义域实例与定义域缩小"""
import itertools

import pytest

from modcsp.exceptions import GuardExceeded, PreconditionError
from modcsp.fixtures import load_instance, load_operation, load_structure, random_instance, random_structure
from modcsp.homcount import count_homs, enumerate_homs
from modcsp.polyclone import p_automorphic_witness
from modcsp.reduce import (
    ConsistentCollection, binarize, binarize_instance, build_Hf, build_sP, consistent_permutations,
    group_maltsev_solve, is_consistent, nontrivial_orbits, perm_maltsev, reduce_instance, section_permutation,
    solution_from_binarized, split_sort_names, transfer_solution, with_domain_constraints,
)
from modcsp.structures import Constraint, CspInstance

CASES = 30


@pytest.fixture(scope="module")
def aff3():
    return load_structure("aff3")


@pytest.fixture(scope="module")
def aff3_poly(aff3):
    return load_operation("aff3_poly", aff3)


def _random_pair(k: int, seed: int):
    sizes = ((2,), (3,), (2, 2))[k % 3]
    h = random_structure(f"binarize_h_{k}", sizes=sizes, relations=2, max_arity=3, density=0.6, seed=seed)
    instance = random_instance(f"binarize_p_{k}", h, variables=1 + k % 4, constraints=1 + k % 3, seed=seed)
    return h, instance


@pytest.mark.parametrize("k", range(CASES))
def test_binarization_preserves_counts(k, seed):
    h, instance = _random_pair(k, seed)
    pair = binarize_instance(instance, h)
    assert count_homs(pair.instance, pair.structure) == count_homs(instance, h)


@pytest.mark.parametrize("k", range(0, CASES, 3))
def test_solution_transfer_round_trip(k, seed):
    h, instance = _random_pair(k, seed)
    pair = binarize_instance(instance, h)
    for solution in enumerate_homs(instance, h):
        psi = transfer_solution(solution, pair)
        assert solution_from_binarized(psi, pair) == solution


def test_binarized_structure_shape():
    h = load_structure("le2")
    pair = binarize(h)
    # R 与 dom[D] 两个类别
    assert [s.name for s in pair.structure.sorts] == ["R", "dom[D]"]
    assert pair.structure.sort("R").size == 3
    q = pair.structure.relation("Q[0,1,0,0]")
    assert len(q) == 3
    assert pair.q_source["Q[0,1,0,0]"] == (0, 1, 0, 0)


def test_domain_constraints_are_not_duplicated():
    h = load_structure("le2")
    instance = load_instance("edge")
    once = with_domain_constraints(instance, h)
    twice = with_domain_constraints(once, h)
    assert len(once.constraints) == len(instance.constraints) + len(instance.variables)
    assert twice == once


def test_perm_maltsev_identities():
    for x, y in itertools.product(itertools.permutations(range(3)), repeat=2):
        assert perm_maltsev(x, x, y) == y
        assert perm_maltsev(x, y, y) == x


def test_sym_cap(aff3):
    instance = CspInstance((("x", "D"), ("y", "D"), ("z", "D")), (Constraint("A", ("x", "y", "z")),))
    with pytest.raises(GuardExceeded):
        build_sP(instance, aff3, cap=3)
    assert len(build_sP(instance, aff3, cap=4).variables) == 4


def test_identity_collection_is_consistent():
    instance = with_domain_constraints(load_instance("path3"), load_structure("le2c"))
    structure = load_structure("le2c")
    sp = build_sP(instance, structure)
    identity = {int(v[1:]): tuple(range(len(rows))) for v, rows in sp.relations.items()}
    assert is_consistent(instance, ConsistentCollection(identity, dict(
        (int(v[1:]), rows) for v, rows in sp.relations.items())))
    assert group_maltsev_solve(sp) is not None
    assert consistent_permutations(instance, structure) is not None


def test_aff3_witness_and_section(aff3, aff3_poly):
    witness = p_automorphic_witness(aff3_poly, 2)
    assert witness == ("D", "2")
    assert nontrivial_orbits(aff3_poly, "D", "2") == frozenset({"0", "1"})
    rows = aff3.relation("R").tuples
    assert section_permutation(aff3_poly, ("D", "D"), ("2", "2"), rows) == (1, 0)


def test_build_Hf(aff3, aff3_poly):
    hf = build_Hf(aff3, aff3_poly, 2, ("D", "2"))
    first, second = split_sort_names("D")
    assert hf.elements(first) == ("0", "1")
    assert hf.elements(second) == ("2",)
    assert hf.relation("R'").tuple_set == aff3.relation("R").tuple_set
    assert hf.relation("E''").tuples == (("2", "2"),)
    assert not hf.has_relation("R")
    with pytest.raises(PreconditionError):
        build_Hf(aff3, aff3_poly, 3, ("D", "2"))


@pytest.mark.parametrize("k", range(CASES))
def test_reduction_preserves_counts_mod_p(k, seed, aff3, aff3_poly):
    instance = random_instance(f"reduce_{k}", aff3, variables=1 + k % 5, constraints=k % 6, seed=seed)
    reduced = reduce_instance(instance, aff3, aff3_poly, 2)
    assert count_homs(reduced.instance, reduced.structure) % 2 == count_homs(instance, aff3) % 2
    kinds = {entry["kind"] for entry in reduced.ledger}
    assert kinds <= {"delete-tuple", "drop-element", "orbit-cancel", "keep"}
    assert set(reduced.variable_sorts) == set(instance.variable_names)


def test_reduction_on_free_variable(aff3, aff3_poly):
    instance = CspInstance((("x", "D"),), ())
    reduced = reduce_instance(instance, aff3, aff3_poly, 2)
    # 3 个解，消去 {0,1} 后只剩 2
    assert reduced.variable_sorts["x"] == "D''"
    assert count_homs(reduced.instance, reduced.structure) == 1
