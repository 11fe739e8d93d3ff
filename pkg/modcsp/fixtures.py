"""
夹具与随机生成器

固定夹具以 JSON 存放在 data/fixtures 下；随机结构、实例的生成统一走
utils.reproducibility 的用例种子，保证同一种子下输出一致。
"""
import itertools
import json
import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config.paths import get_fixture_path
from modcsp.exceptions import StructureError
from modcsp.homcount import FpMatrix, load_digraph
from modcsp.mpp import MppFormula, formula_from_dict
from modcsp.polyclone import OperationTable, operation_from_dict
from modcsp.structures import (
    Constraint, CspInstance, MultiSortedStructure, Relation, Sort, add_constants, instance_from_dict,
    structure_from_dict,
)
from utils.reproducibility import make_rng

logger = logging.getLogger(__name__)

# 夹具名称 -> 说明
STRUCTURE_FIXTURES = {
    "neq2": "两元素不等关系",
    "le2": "两元素 {00,01,10}",
    "le2c": "le2 加常量",
    "neq2c": "neq2 加常量",
    "affine2c": "x⊕y⊕z=0 加常量",
    "or3c": "三元析取加常量",
    "horn2c": "蕴含关系加常量",
    "le3c": "三元素链序加常量",
    "k3c": "三着色加常量",
    "le2_point": "le2 外加一个孤立点，加常量",
    "aff3": "带 2-自同构多项式的三元素结构",
    "constants3": "只有常量的三元素结构",
    "le2c_neq2c": "两类别：le2c 与 neq2c",
}

# 可以得到障碍证书的夹具（模数 2）
HARD_FIXTURES = ("le2c", "or3c", "horn2c", "le3c", "k3c", "le2c_neq2c")


def _read(name: str) -> dict:
    path = get_fixture_path(name)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise StructureError(f"夹具不存在: {name}", path) from None
    except json.JSONDecodeError as exc:
        raise StructureError(f"夹具 JSON 格式错误: {exc.msg}", f"{path}:{exc.lineno}") from None


def load_structure(name: str) -> MultiSortedStructure:
    return structure_from_dict(_read(name))


def load_instance(name: str) -> CspInstance:
    return instance_from_dict(_read(name))


def load_formula(name: str) -> MppFormula:
    return formula_from_dict(_read(name))


def load_operation(name: str, structure: MultiSortedStructure) -> OperationTable:
    return operation_from_dict(_read(name), structure.domains())


def load_matrix(name: str) -> FpMatrix:
    payload = _read(name)
    return FpMatrix(int(payload["p"]), payload["rows"])


def load_graph(name: str):
    payload = _read(name)
    return load_digraph(int(payload["n"]), payload.get("edges", []))


def two_element(name: str, rows: Sequence[Tuple[str, str]], constants: bool = False) -> MultiSortedStructure:
    """单个二元关系的两元素结构"""
    structure = MultiSortedStructure.create([Sort("D", ("0", "1"))],
                                            [Relation(name, ("D", "D"), tuple(sorted(rows)))])
    return add_constants(structure) if constants else structure


def binary_relation_structures() -> Iterator[MultiSortedStructure]:
    """全部 16 个只含一个二元关系的两元素结构（含空关系）"""
    pairs = list(itertools.product("01", repeat=2))
    for mask in range(16):
        rows = [pairs[k] for k in range(4) if mask >> k & 1]
        yield two_element("R", rows)


def maltsev_of_types(types: Sequence[int]) -> OperationTable:
    """
    按每个类别的类型构造两元素 Mal'tsev 运算

    类型 t 决定 (m(0,1,0), m(1,0,1))：0 ↦ (1,0)，1 ↦ (0,1)，2 ↦ (0,0)，3 ↦ (1,1)。
    """
    choice = {0: ("1", "0"), 1: ("0", "1"), 2: ("0", "0"), 3: ("1", "1")}
    domains = {f"S{k}": ("0", "1") for k in range(len(types))}
    sides = {f"S{k}": choice[t] for k, t in enumerate(types)}

    def fn(sort, args):
        x, y, z = args
        if y == z:
            return x
        if x == y:
            return z
        return sides[sort][0] if x == "0" else sides[sort][1]

    return OperationTable.from_function(domains, 3, fn)


def all_maltsev_tables(max_sorts: int = 4) -> Iterator[OperationTable]:
    for count in range(1, max_sorts + 1):
        for types in itertools.product(range(4), repeat=count):
            yield maltsev_of_types(types)


def random_structure(case: str, sizes: Sequence[int] = (3,), relations: int = 2, max_arity: int = 2,
                     density: float = 0.5, seed: Optional[int] = None,
                     constants: bool = False) -> MultiSortedStructure:
    rng = make_rng(case, seed if seed is not None else 42)
    sorts = [Sort(f"S{k}" if len(sizes) > 1 else "D", tuple(str(e) for e in range(n))) for k, n in enumerate(sizes)]
    rels = []
    for index in range(relations):
        arity = int(rng.integers(1, max_arity + 1))
        sort_type = tuple(sorts[int(rng.integers(len(sorts)))].name for _ in range(arity))
        rels.append(Relation(f"R{index}", sort_type, _random_rows(rng, sorts, sort_type, density)))
    structure = MultiSortedStructure.create(sorts, rels)
    return add_constants(structure) if constants else structure


def _random_rows(rng: np.random.Generator, sorts: Sequence[Sort], sort_type: Sequence[str], density: float):
    elements = {s.name: s.elements for s in sorts}
    return tuple(row for row in itertools.product(*(elements[s] for s in sort_type)) if rng.random() < density)


def random_like(case: str, h: MultiSortedStructure, sizes: Sequence[int], density: float = 0.4,
                seed: Optional[int] = None) -> MultiSortedStructure:
    """与 h 同签名的随机结构，各类别元素个数由 sizes 给出"""
    rng = make_rng(case, seed if seed is not None else 42)
    sorts = [Sort(s.name, tuple(f"g{e}" for e in range(n))) for s, n in zip(h.sorts, sizes)]
    rels = [Relation(r.name, r.sort_type, _random_rows(rng, sorts, r.sort_type, density)) for r in h.relations]
    return MultiSortedStructure.create(sorts, rels, check=False)


def random_instance(case: str, structure: MultiSortedStructure, variables: int = 4, constraints: int = 4,
                    seed: Optional[int] = None) -> CspInstance:
    """随机实例：变量类别与约束关系都按种子抽取"""
    rng = make_rng(case, seed if seed is not None else 42)
    relations = [r for r in structure.relations if r.arity > 0]
    by_sort: Dict[str, List[str]] = {}
    declared = []
    for k in range(variables):
        sort = structure.sorts[int(rng.integers(len(structure.sorts)))].name
        declared.append((f"x{k}", sort))
        by_sort.setdefault(sort, []).append(f"x{k}")
    usable = [r for r in relations if all(s in by_sort for s in r.sort_type)]
    result = []
    for _ in range(constraints if usable else 0):
        r = usable[int(rng.integers(len(usable)))]
        scope = tuple(by_sort[s][int(rng.integers(len(by_sort[s])))] for s in r.sort_type)
        result.append(Constraint(r.name, scope))
    return CspInstance(tuple(declared), tuple(result))


def close_under(f: OperationTable, sort_type: Sequence[str], rows) -> Tuple[Tuple[str, ...], ...]:
    """关系在二元运算 f 下的闭包"""
    current = set(map(tuple, rows))
    while True:
        fresh = {f.apply_rows(sort_type, (a, b)) for a in current for b in current} - current
        if not fresh:
            return tuple(sorted(current))
        current |= fresh


def random_preserved_structure(case: str, f: OperationTable, relations: int = 2, density: float = 0.3,
                               seed: Optional[int] = None) -> MultiSortedStructure:
    """单类别随机结构，每个关系都在 f 下封闭，并加入常量（f 须幂等）"""
    rng = make_rng(case, seed if seed is not None else 42)
    (sort, elements), = f.domains.items()
    sorts = [Sort(sort, tuple(elements))]
    rels = []
    for index in range(relations):
        arity = int(rng.integers(1, 3))
        sort_type = (sort,) * arity
        rows = _random_rows(rng, sorts, sort_type, density)
        rels.append(Relation(f"R{index}", sort_type, close_under(f, sort_type, rows)))
    return add_constants(MultiSortedStructure.create(sorts, rels))


def random_graph_structure(case: str, size: int, density: float = 0.4,
                           seed: Optional[int] = None) -> MultiSortedStructure:
    """单类别、一个二元关系 E 的随机结构"""
    rng = make_rng(case, seed if seed is not None else 42)
    sorts = [Sort("D", tuple(str(e) for e in range(size)))]
    rows = _random_rows(rng, sorts, ("D", "D"), density)
    return MultiSortedStructure.create(sorts, [Relation("E", ("D", "D"), rows)])
