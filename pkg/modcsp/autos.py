"""
自同构模块

自同构群枚举、p 阶自同构、p-刚性约化、立方的 M-自同构，以及稳定子查询。
置换的阶由 sympy 的 Permutation 计算。
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from sympy import ilcm
from sympy.combinatorics.permutations import Permutation

from config.settings import settings
from modcsp.exceptions import GuardExceeded
from modcsp.homcount import require_prime
from modcsp.structures import MultiSortedMap, MultiSortedStructure, induced_substructure, iter_isomorphisms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Automorphism:
    mapping: MultiSortedMap
    order: int

    def apply(self, sort: str, element: str) -> str:
        return self.mapping.apply(sort, element)


def map_order(structure: MultiSortedStructure, mapping: MultiSortedMap) -> int:
    """各类别置换阶的最小公倍数"""
    order = 1
    for s in structure.sorts:
        if s.size == 0:
            continue
        perm = Permutation([s.positions[mapping.apply(s.name, e)] for e in s.elements])
        order = ilcm(order, perm.order())
    return int(order)


def check_guard(structure: MultiSortedStructure, guard: Optional[int] = None) -> None:
    guard = settings.AUTOS_GUARD if guard is None else guard
    bound = 1
    for s in structure.sorts:
        bound *= math.factorial(s.size)
    if bound > guard:
        raise GuardExceeded("automorphism_search", bound, guard)


def is_group(maps: Sequence[MultiSortedMap]) -> bool:
    """有限集合是子群当且仅当含单位元且对复合封闭"""
    members = set(maps)
    if not any(m.is_identity() for m in members):
        return False
    return all(a.compose(b) in members for a in members for b in members)


def automorphisms(structure: MultiSortedStructure, guard: Optional[int] = None) -> List[Automorphism]:
    """按规范顺序枚举 Aut(H)"""
    check_guard(structure, guard)
    result = [Automorphism(m, map_order(structure, m)) for m in iter_isomorphisms(structure, structure)]
    if len(result) <= 64 and not is_group([a.mapping for a in result]):
        logger.error("自同构集合不构成群，结构可能未规范化")
    logger.debug(f"找到 {len(result)} 个自同构")
    return result


def p_automorphisms(structure: MultiSortedStructure, p: int, guard: Optional[int] = None) -> List[Automorphism]:
    p = require_prime(p)
    return [a for a in automorphisms(structure, guard) if a.order == p]


def p_rigid_reduce(structure: MultiSortedStructure, p: int,
                   pick: Optional[Callable[[List[Automorphism]], Automorphism]] = None,
                   guard: Optional[int] = None) -> Tuple[MultiSortedStructure, List[Automorphism]]:
    """
    反复限制到 p 阶自同构的不动点集，直到结构 p-刚性

    Returns:
        (约化后的结构, 每一步使用的自同构)
    """
    p = require_prime(p)
    current = structure
    chain: List[Automorphism] = []
    while True:
        candidates = p_automorphisms(current, p, guard)
        if not candidates:
            break
        chosen = pick(candidates) if pick else candidates[0]
        chain.append(chosen)
        current = induced_substructure(current, chosen.mapping.fixed_points())
        logger.info(f"p-刚性约化: 限制到不动点, 剩余 {current.total_size} 个元素")
    return current, chain


def is_p_rigid(structure: MultiSortedStructure, p: int, guard: Optional[int] = None) -> bool:
    return not p_automorphisms(structure, p, guard)


@dataclass(frozen=True)
class MAutomorphism:
    """H^(3) 上由三元多态 (g1, g2, g3) 给出的自同构"""
    components: Tuple["OperationTable", "OperationTable", "OperationTable"]
    order: int

    def image(self, sort: str, triple: Tuple[str, str, str]) -> Tuple[str, str, str]:
        return tuple(g(sort, *triple) for g in self.components)


def _cube_order(components, domains: Dict[str, Tuple[str, ...]]) -> Optional[int]:
    """若 (g1,g2,g3) 在每个类别的立方上是双射则返回其阶"""
    order = 1
    for sort, elements in domains.items():
        cube = list(itertools.product(elements, repeat=3))
        if not cube:
            continue
        index = {t: i for i, t in enumerate(cube)}
        images = [index[tuple(g(sort, *t) for g in components)] for t in cube]
        if len(set(images)) != len(images):
            return None
        order = ilcm(order, Permutation(images).order())
    return int(order)


def m_automorphisms(structure: MultiSortedStructure, p: Optional[int] = None,
                    guard: Optional[int] = None) -> List[MAutomorphism]:
    """
    枚举 H^(3) 的 M-自同构

    第 j 个分量必须是在 I ∪ J 坐标上与第 j 个投影一致的三元多态。
    给定 p 时只保留阶为 p 的（以及恒等）。
    """
    from modcsp.polyclone import enumerate_polymorphisms, indicator_coordinates

    if p is not None:
        p = require_prime(p)
    guard = settings.M_AUTOS_GUARD if guard is None else guard
    coords = indicator_coordinates(structure)
    pinned = list(coords.I) + list(coords.J)
    families = []
    for j in range(3):
        pins = {(sort, triple): triple[j] for sort, triple in pinned}
        families.append(enumerate_polymorphisms(structure, 3, pins=pins))
    total = len(families[0]) * len(families[1]) * len(families[2])
    if total > guard:
        raise GuardExceeded("m_automorphism_search", total, guard)

    domains = structure.domains()
    result = []
    for g1 in families[0]:
        for g2 in families[1]:
            for g3 in families[2]:
                order = _cube_order((g1, g2, g3), domains)
                if order is None:
                    continue
                if p is not None and order not in (1, p):
                    continue
                result.append(MAutomorphism((g1, g2, g3), order))
    logger.debug(f"找到 {len(result)} 个 M-自同构")
    return result


@dataclass(frozen=True)
class StabilizerQuery:
    """稳定子查询：固定若干点，并（可选）保持集合 A"""
    points: Tuple[Tuple[str, str], ...] = ()
    stable: Optional[FrozenSet[Tuple[str, str]]] = None


def stab(query: StabilizerQuery, structure: MultiSortedStructure,
         autos: Optional[List[Automorphism]] = None) -> List[Automorphism]:
    """返回固定 query.points 且满足 π(A) ⊆ A 的自同构"""
    autos = automorphisms(structure) if autos is None else autos
    result = []
    for a in autos:
        if any(a.apply(s, e) != e for s, e in query.points):
            continue
        if query.stable is not None and any((s, a.apply(s, e)) not in query.stable for s, e in query.stable):
            continue
        result.append(a)
    return result


def is_automorphism_stable(stable: Iterable[Tuple[str, str]], structure: MultiSortedStructure,
                           autos: Optional[List[Automorphism]] = None) -> Optional[Tuple[str, str]]:
    """
    判断 A 是否自同构稳定

    Returns:
        使 {π : π(ā) ∈ A} 成为子群的见证 ā，不存在时返回 None
    """
    stable = frozenset(stable)
    autos = automorphisms(structure) if autos is None else autos
    for sort, element in sorted(stable, key=lambda se: (structure.sort_names.index(se[0]),
                                                         structure.sort(se[0]).positions[se[1]])):
        members = [a.mapping for a in autos if (sort, a.apply(sort, element)) in stable]
        if is_group(members):
            return sort, element
    return None
