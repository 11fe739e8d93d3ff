"""同态计数、Möbius 反演与矩阵配分函数的测试"""
import math

import networkx as nx
import pytest

from modcsp.exceptions import GuardExceeded, ModulusError, StructureError
from modcsp.fixtures import load_graph, load_instance, load_matrix, load_structure, random_like, random_structure
from modcsp.homcount import (
    FpMatrix, PartitionLattice, _bottom_to_top_weight, count_homs, count_homs_mod, count_injective,
    count_injective_mobius, count_pointed, enumerate_homs, eval_partition_function, load_digraph,
)

MOBIUS_CASES = 200


def test_neq2_single_edge():
    h = load_structure("neq2")
    edge = load_instance("edge")
    assert count_homs(edge, h) == 2
    assert count_homs_mod(edge, h, 2) == 0


def test_pins_restrict_variables():
    h = load_structure("neq2")
    edge = load_instance("edge")
    assert count_homs(edge, h, {"x": "0"}) == 1
    assert count_homs(edge, h, {"x": "0", "y": "0"}) == 0
    assert count_homs(edge, h, {"x": {"0", "1"}}) == 2


def test_path_on_le2():
    h = load_structure("le2")
    path = load_instance("path3")
    assert count_homs(path, h) == 5
    assert count_homs_mod(path, h, 5) == 0
    first = next(enumerate_homs(path, h))
    assert first == {"x": "0", "y": "0", "z": "0"}


@pytest.mark.parametrize("p", [0, 1, 4, 9])
def test_non_prime_modulus(p):
    with pytest.raises(ModulusError):
        count_homs_mod(load_instance("edge"), load_structure("neq2"), p)


def test_pointed_and_injective_counts():
    h = load_structure("le2")
    g = load_structure("neq2")
    # NEQ2 → LE2: (φ0,φ1) 与 (φ1,φ0) 都在 LE2 中
    assert count_homs(load_instance("edge"), h) == 3
    assert count_pointed(g, [("D", "0")], h, ["0"]) == 2
    assert count_pointed(g, [("D", "0")], h, ["1"]) == 1
    assert count_injective(g, h) == 2


@pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
def test_bottom_to_top_weight(m):
    assert _bottom_to_top_weight(m) == (-1) ** (m - 1) * math.factorial(m - 1)


def test_partition_lattice_order():
    lattice = PartitionLattice.of({"A": ("a", "b", "c"), "B": ("x", "y")})
    assert len(lattice) == 5 * 2
    assert PartitionLattice.leq(lattice.bottom, lattice.top)
    assert not PartitionLattice.leq(lattice.top, lattice.bottom)


def test_mobius_guard():
    g = random_structure("guard", sizes=(5, 5), relations=1, seed=1)
    with pytest.raises(GuardExceeded):
        count_injective_mobius(g, g, cap=8)


@pytest.mark.parametrize("case", range(MOBIUS_CASES))
def test_mobius_matches_direct_count(case, seed):
    h = random_structure(f"mobius_h_{case}", sizes=(3, 2), relations=2, seed=seed)
    g = random_like(f"mobius_g_{case}", h, sizes=(1 + case % 3, 1 + (case // 3) % 2), seed=seed)
    assert count_injective_mobius(g, h) == count_injective(g, h)


@pytest.mark.parametrize("case", range(20))
def test_mobius_matches_direct_count_with_points(case, seed):
    h = random_structure(f"mobius_pin_h_{case}", sizes=(3, 2), relations=2, seed=seed)
    g = random_like(f"mobius_pin_g_{case}", h, sizes=(3, 2), seed=seed)
    points = [("S0", "g0"), ("S1", "g1")]
    targets = ["1", {"0", "1"}]
    assert count_injective_mobius(g, h, points, targets) == count_injective(g, h, points, targets)


def test_eval_matrix_on_single_edge():
    matrix = load_matrix("eval_matrix_p3")
    graph = load_graph("one_edge_graph")
    assert eval_partition_function(matrix, graph) == 0


def test_eval_matrix_counts_parallel_edges():
    matrix = FpMatrix(5, [[1, 2], [3, 4]])
    graph = load_digraph(2, [[0, 1], [0, 1]])
    # Σ M[a,b]^2 = 1 + 4 + 9 + 16 = 30
    assert eval_partition_function(matrix, graph) == 30 % 5
    loop = load_digraph(1, [[0, 0]])
    assert eval_partition_function(matrix, loop) == (1 + 4) % 5


def test_matrix_validation():
    with pytest.raises(StructureError):
        FpMatrix(3, [[0, 3], [1, 1]])
    with pytest.raises(StructureError):
        FpMatrix(3, [[0, 1, 2]])
    with pytest.raises(ModulusError):
        FpMatrix(6, [[1]])


def test_graph_validation():
    with pytest.raises(StructureError):
        load_digraph(2, [[0, 2]])
    graph = nx.MultiDiGraph()
    graph.add_edge(1, 2)
    with pytest.raises(StructureError):
        eval_partition_function(FpMatrix(2, [[1]]), graph)
