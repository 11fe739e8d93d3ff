"""
同态计数模块

精确与模 p 同态计数、带定点的计数、划分格上的 Möbius 权重、
单射同态的 Möbius 反演，以及有向图上的模 p 划分函数。
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from sympy import isprime
from sympy.utilities.iterables import multiset_partitions

from config.settings import settings
from modcsp.engine import SearchSpace
from modcsp.exceptions import GuardExceeded, ModulusError, StructureError
from modcsp.structures import (
    CspInstance, MultiSortedStructure, Relation, Sort, element_variable,
    structure_as_instance, validate_instance,
)

logger = logging.getLogger(__name__)

Pins = Mapping[str, Union[str, Iterable[str]]]


def require_prime(p: int) -> int:
    if not isinstance(p, (int, np.integer)) or not isprime(int(p)):
        raise ModulusError(p)
    return int(p)


def compile_instance(instance: CspInstance, structure: MultiSortedStructure,
                     domains: Optional[Pins] = None,
                     alldiff_sorts: Iterable[str] = (),
                     order: Optional[Sequence[int]] = None) -> SearchSpace:
    """
    把实例编译为下标形式的搜索空间

    Args:
        domains: 变量到单个元素或元素集合的限制
        alldiff_sorts: 这些类别中的变量取值两两不同
    """
    validate_instance(instance, structure)
    index = {name: k for k, (name, _) in enumerate(instance.variables)}
    restricted = dict(domains or {})
    for name in restricted:
        if name not in index:
            raise StructureError(f"固定了未声明的变量 {name}")

    doms = []
    for name, sort in instance.variables:
        srt = structure.sort(sort)
        if name in restricted:
            wanted = restricted[name]
            wanted = {wanted} if isinstance(wanted, str) else set(wanted)
            stray = wanted - set(srt.elements)
            if stray:
                raise StructureError(f"固定值 {sorted(stray)[0]} 不属于类别 {sort}", f"variable {name}")
            doms.append([i for i, e in enumerate(srt.elements) if e in wanted])
        else:
            doms.append(list(range(srt.size)))

    constraints = [
        (tuple(index[v] for v in c.scope), structure.index_tuples[c.relation])
        for c in instance.constraints
    ]
    alldiff_sorts = set(alldiff_sorts)
    groups = {k: sort for k, (_, sort) in enumerate(instance.variables) if sort in alldiff_sorts}
    group_ids = {sort: i for i, sort in enumerate(sorted(alldiff_sorts))}
    return SearchSpace(doms, constraints, {k: group_ids[s] for k, s in groups.items()}, order)


def enumerate_homs(instance: CspInstance, structure: MultiSortedStructure,
                   domains: Optional[Pins] = None) -> Iterator[Dict[str, str]]:
    """按字典序枚举解（变量顺序为实例中的声明顺序）"""
    space = compile_instance(instance, structure, domains)
    elements = [structure.sort(sort).elements for _, sort in instance.variables]
    names = instance.variable_names
    for solution in space.iter_solutions():
        yield {names[k]: elements[k][v] for k, v in enumerate(solution)}


def count_homs(instance: CspInstance, structure: MultiSortedStructure,
               domains: Optional[Pins] = None) -> int:
    return compile_instance(instance, structure, domains).count()


def count_homs_mod(instance: CspInstance, structure: MultiSortedStructure, p: int,
                   domains: Optional[Pins] = None) -> int:
    p = require_prime(p)
    return count_homs(instance, structure, domains) % p


def _point_domains(g: MultiSortedStructure, points: Sequence[Tuple[str, str]],
                   targets: Sequence[Union[str, Iterable[str]]]) -> Dict[str, set]:
    if len(points) != len(targets):
        raise StructureError("定点个数与目标个数不符", "pins")
    domains: Dict[str, set] = {}
    for (sort, element), target in zip(points, targets):
        if element not in g.sort(sort).elements:
            raise StructureError(f"元素 {element} 不属于类别 {sort}", "pins")
        wanted = {target} if isinstance(target, str) else set(target)
        name = element_variable(g, sort, element)
        domains[name] = domains[name] & wanted if name in domains else wanted
    return domains


def count_pointed(g: MultiSortedStructure, points: Sequence[Tuple[str, str]],
                  h: MultiSortedStructure, targets: Sequence[Union[str, Iterable[str]]]) -> int:
    """
    带定点的同态计数 hom((G, x̄), (H, ȳ))

    Args:
        points: G 中的定点 (类别, 元素)
        targets: 每个定点的像，可以是单个元素或元素子集
    """
    instance = structure_as_instance(g, h)
    return count_homs(instance, h, _point_domains(g, points, targets))


def count_injective(g: MultiSortedStructure, h: MultiSortedStructure,
                    points: Sequence[Tuple[str, str]] = (),
                    targets: Sequence[Union[str, Iterable[str]]] = ()) -> int:
    """按类别单射的同态个数（直接枚举）"""
    instance = structure_as_instance(g, h)
    space = compile_instance(instance, h, _point_domains(g, points, targets),
                             alldiff_sorts=g.sort_names)
    return space.count()


Partition = Tuple[Tuple[Tuple[str, ...], ...], ...]


def _sort_partitions(elements: Tuple[str, ...]) -> List[Tuple[Tuple[str, ...], ...]]:
    if not elements:
        return [()]
    result = []
    for blocks in multiset_partitions(list(range(len(elements)))):
        ordered = sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0])
        result.append(tuple(tuple(elements[i] for i in b) for b in ordered))
    return result


@dataclass(frozen=True)
class PartitionLattice:
    """
    多类别划分格 Part(A)：每个类别各取一个划分

    元素按块数从少到多排列，γ ≤ θ 表示 γ 比 θ 更细。
    """
    base: Tuple[Tuple[str, Tuple[str, ...]], ...]
    elements: Tuple[Partition, ...] = field(default=(), compare=False)

    @classmethod
    def of(cls, base: Mapping[str, Sequence[str]], cap: Optional[int] = None) -> "PartitionLattice":
        cap = settings.MOBIUS_MAX_BASE if cap is None else cap
        base = tuple((sort, tuple(elements)) for sort, elements in base.items())
        total = sum(len(e) for _, e in base)
        if total > cap:
            raise GuardExceeded("mobius_max_base", total, cap)
        per_sort = [_sort_partitions(elements) for _, elements in base]
        combos = list(itertools.product(*per_sort))
        combos.sort(key=lambda theta: (sum(len(part) for part in theta), theta))
        return cls(base, tuple(combos))

    @classmethod
    def of_structure(cls, g: MultiSortedStructure, cap: Optional[int] = None) -> "PartitionLattice":
        return cls.of({s.name: s.elements for s in g.sorts}, cap)

    @property
    def top(self) -> Partition:
        return self.elements[0]

    @property
    def bottom(self) -> Partition:
        return tuple(tuple((e,) for e in elements) for _, elements in self.base)

    @staticmethod
    def leq(gamma: Partition, theta: Partition) -> bool:
        """γ ≤ θ：γ 的每个块都包含在 θ 的某个块中"""
        for g_part, t_part in zip(gamma, theta):
            owner = {e: i for i, block in enumerate(t_part) for e in block}
            for block in g_part:
                if len({owner[e] for e in block}) != 1:
                    return False
        return True

    def __len__(self) -> int:
        return len(self.elements)


def _coarsenings(part: Tuple[Tuple[str, ...], ...], order: Dict[str, int]) -> Iterator[Tuple[Tuple[str, ...], ...]]:
    """θ 的所有严格更粗划分（由块的划分得到）"""
    k = len(part)
    if k <= 1:
        return
    for grouping in multiset_partitions(list(range(k))):
        if len(grouping) == k:
            continue
        blocks = [tuple(sorted((e for i in g for e in part[i]), key=order.__getitem__)) for g in grouping]
        blocks.sort(key=lambda b: order[b[0]])
        yield tuple(blocks)


def mobius_weights(lattice: PartitionLattice) -> Dict[Partition, int]:
    """
    从顶端开始的递推权重：w(顶) = 1，w(θ) = -Σ_{γ>θ} w(γ)

    在乘积格上逐类别计算后相乘。
    """
    per_sort = []
    for sort, elements in lattice.base:
        order = {e: i for i, e in enumerate(elements)}
        parts = _sort_partitions(elements)
        parts.sort(key=len)
        weights: Dict[Tuple, int] = {}
        for part in parts:
            if len(part) <= 1:
                weights[part] = 1
            else:
                weights[part] = -sum(weights[c] for c in _coarsenings(part, order))
        per_sort.append(weights)

    result = {}
    for theta in lattice.elements:
        w = 1
        for k, part in enumerate(theta):
            w *= per_sort[k][part]
        result[theta] = w
    return result


@lru_cache(maxsize=None)
def _bottom_to_top_weight(m: int) -> int:
    """Part(m) 中离散划分的权重，即 μ(=, 全块)"""
    if m <= 1:
        return 1
    lattice = PartitionLattice.of({"_": tuple(str(i) for i in range(m))}, cap=max(m, settings.MOBIUS_MAX_BASE))
    return mobius_weights(lattice)[lattice.bottom]


def quotient_structure(h: MultiSortedStructure, theta: Mapping[str, Sequence[Sequence[str]]]
                       ) -> Tuple[MultiSortedStructure, Dict[Tuple[str, str], str]]:
    """
    商结构 H/θ

    Returns:
        (商结构, (类别, 元素) 到等价类名称的映射)
    """
    class_of: Dict[Tuple[str, str], str] = {}
    sorts = []
    for s in h.sorts:
        blocks = [list(b) for b in theta.get(s.name, [[e] for e in s.elements])]
        covered = [e for b in blocks for e in b]
        if sorted(covered) != sorted(s.elements) or len(covered) != len(set(covered)):
            raise StructureError("θ 必须是类别元素的划分", f"sort {s.name}")
        blocks = [sorted(b, key=s.positions.__getitem__) for b in blocks if b]
        blocks.sort(key=lambda b: s.positions[b[0]])
        names = []
        for b in blocks:
            name = b[0] if len(b) == 1 else "{" + ",".join(b) + "}"
            names.append(name)
            for e in b:
                class_of[(s.name, e)] = name
        sorts.append(Sort(s.name, tuple(names)))
    relations = [
        Relation(r.name, r.sort_type,
                 tuple(tuple(class_of[(srt, v)] for v, srt in zip(t, r.sort_type)) for t in r.tuples))
        for r in h.relations
    ]
    return MultiSortedStructure.create(sorts, relations, check=False), class_of


def count_injective_mobius(g: MultiSortedStructure, h: MultiSortedStructure,
                           points: Sequence[Tuple[str, str]] = (),
                           targets: Sequence[Union[str, Iterable[str]]] = (),
                           cap: Optional[int] = None) -> int:
    """
    通过划分格上的 Möbius 反演计算单射同态个数：
    inj = Σ_θ μ(=, θ) · hom(G/θ, H)，其中 μ(=, θ) 是各块 μ 值的乘积。
    """
    lattice = PartitionLattice.of_structure(g, cap)
    pinned: Dict[Tuple[str, str], set] = {}
    for (sort, element), target in zip(points, targets):
        wanted = {target} if isinstance(target, str) else set(target)
        key = (sort, element)
        pinned[key] = pinned[key] & wanted if key in pinned else wanted

    total = 0
    for theta in lattice.elements:
        weight = 1
        for part in theta:
            for block in part:
                weight *= _bottom_to_top_weight(len(block))
        blocks = {sort: part for (sort, _), part in zip(lattice.base, theta)}
        quotient, class_of = quotient_structure(g, blocks)

        class_targets: Dict[Tuple[str, str], set] = {}
        for key, wanted in pinned.items():
            ckey = (key[0], class_of[key])
            class_targets[ckey] = class_targets[ckey] & wanted if ckey in class_targets else set(wanted)
        if any(not t for t in class_targets.values()):
            continue
        keys = list(class_targets)
        homs = count_pointed(quotient, keys, h, [class_targets[k] for k in keys])
        total += weight * homs
    return total


@dataclass(frozen=True, eq=False)
class FpMatrix:
    """F_p 上的方阵"""
    p: int
    rows: np.ndarray

    def __post_init__(self):
        require_prime(self.p)
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] == 0:
            raise StructureError("矩阵必须是非空方阵", "matrix")
        if (rows < 0).any() or (rows >= self.p).any():
            raise StructureError(f"矩阵元素必须位于 [0, {self.p})", "matrix")
        object.__setattr__(self, "rows", rows)

    @property
    def dimension(self) -> int:
        return int(self.rows.shape[0])

    def to_dict(self) -> dict:
        return {"p": self.p, "rows": self.rows.tolist()}


def load_digraph(n: int, edges: Iterable[Sequence[int]]) -> nx.MultiDiGraph:
    """构造顶点为 0..n-1 的有向多重图"""
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(range(n))
    for index, edge in enumerate(edges):
        u, v = int(edge[0]), int(edge[1])
        if not (0 <= u < n and 0 <= v < n):
            raise StructureError(f"边端点超出范围 0..{n - 1}", f"edge {index}")
        graph.add_edge(u, v)
    return graph


def eval_partition_function(matrix: FpMatrix, graph: nx.MultiDiGraph) -> int:
    """Z_M(G) = Σ_φ Π_{(u,v)∈E} M[φ(u), φ(v)] (mod p)"""
    n = graph.number_of_nodes()
    if set(graph.nodes) != set(range(n)):
        raise StructureError("有向图顶点必须编号为 0..n-1", "graph")
    p = matrix.p
    k = matrix.dimension
    rows = matrix.rows
    edges = [(int(u), int(v)) for u, v in graph.edges()]
    total = 0
    for phi in itertools.product(range(k), repeat=n):
        weight = 1
        for u, v in edges:
            weight = weight * int(rows[phi[u], phi[v]]) % p
            if weight == 0:
                break
        total = (total + weight) % p
    return total
