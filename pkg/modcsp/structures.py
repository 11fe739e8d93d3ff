"""
多类别关系结构数据模型

定义有限多类别结构、CSP 实例、类别映射，以及积、幂、扩展、诱导子结构、
谱和同构搜索等构造。所有构造都返回规范化后的新对象：
元组去重并按元素在类别中的位置排序。
"""
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from modcsp.exceptions import StructureError
from utils.structure_validator import StructureValidator

logger = logging.getLogger(__name__)

Row = Tuple[str, ...]


def constant_name(sort: str, element: str) -> str:
    return f"c[{sort}:{element}]"


def equality_name(sort: str) -> str:
    return f"eq[{sort}]"


def domain_name(sort: str) -> str:
    return f"dom[{sort}]"


def tuple_name(parts: Iterable[str]) -> str:
    """积与幂中元素的命名方式 (a,b,c)"""
    return "(" + ",".join(parts) + ")"


@dataclass(frozen=True)
class Sort:
    name: str
    elements: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(str(e) for e in self.elements))

    @property
    def size(self) -> int:
        return len(self.elements)

    @cached_property
    def positions(self) -> Dict[str, int]:
        return {e: i for i, e in enumerate(self.elements)}


@dataclass(frozen=True)
class Relation:
    name: str
    sort_type: Tuple[str, ...]
    tuples: Tuple[Row, ...]

    def __post_init__(self):
        object.__setattr__(self, "sort_type", tuple(self.sort_type))
        object.__setattr__(self, "tuples", tuple(tuple(str(x) for x in t) for t in self.tuples))

    @property
    def arity(self) -> int:
        return len(self.sort_type)

    @cached_property
    def tuple_set(self) -> FrozenSet[Row]:
        return frozenset(self.tuples)

    def __contains__(self, row) -> bool:
        return tuple(row) in self.tuple_set

    def __len__(self) -> int:
        return len(self.tuples)

    def renamed(self, name: str) -> "Relation":
        return Relation(name, self.sort_type, self.tuples)


def make_relation(name: str, sort_type: Sequence[str], tuples: Iterable[Sequence[str]],
                  sorts: Mapping[str, Sort]) -> Relation:
    """构造规范化关系：去重并按元素位置排序"""
    sort_type = tuple(sort_type)
    rows = {tuple(str(x) for x in t) for t in tuples}
    try:
        positions = [sorts[s].positions for s in sort_type]
    except KeyError as exc:
        raise StructureError(f"未知类别 {exc.args[0]}", f"relation {name}") from None

    def sort_key(row):
        return tuple(positions[k].get(v, len(positions[k])) for k, v in enumerate(row))

    return Relation(name, sort_type, tuple(sorted(rows, key=sort_key)))


@dataclass(frozen=True)
class MultiSortedStructure:
    sorts: Tuple[Sort, ...]
    relations: Tuple[Relation, ...]
    constants_flag: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sorts", tuple(self.sorts))
        object.__setattr__(self, "relations", tuple(self.relations))

    @classmethod
    def create(cls, sorts: Iterable[Sort], relations: Iterable[Relation],
               constants_flag: bool = False, check: bool = True) -> "MultiSortedStructure":
        """规范化并（可选）验证后构造结构"""
        sorts = tuple(sorts)
        sort_map = {s.name: s for s in sorts}
        relations = tuple(
            make_relation(r.name, r.sort_type, r.tuples, sort_map)
            if all(s in sort_map for s in r.sort_type) else r
            for r in relations
        )
        structure = cls(sorts, relations, constants_flag)
        if check:
            validate(structure)
        return structure

    @cached_property
    def sort_map(self) -> Dict[str, Sort]:
        return {s.name: s for s in self.sorts}

    @cached_property
    def relation_map(self) -> Dict[str, Relation]:
        return {r.name: r for r in self.relations}

    @property
    def sort_names(self) -> Tuple[str, ...]:
        return tuple(s.name for s in self.sorts)

    def sort(self, name: str) -> Sort:
        try:
            return self.sort_map[name]
        except KeyError:
            raise StructureError(f"未知类别 {name}") from None

    def relation(self, name: str) -> Relation:
        try:
            return self.relation_map[name]
        except KeyError:
            raise StructureError(f"未知关系 {name}") from None

    def has_relation(self, name: str) -> bool:
        return name in self.relation_map

    def elements(self, sort: str) -> Tuple[str, ...]:
        return self.sort(sort).elements

    def domains(self) -> Dict[str, Tuple[str, ...]]:
        return {s.name: s.elements for s in self.sorts}

    @property
    def signature(self) -> Tuple[Tuple[str, Tuple[str, ...]], ...]:
        return tuple((r.name, r.sort_type) for r in self.relations)

    @property
    def total_size(self) -> int:
        return sum(s.size for s in self.sorts)

    def is_similar(self, other: "MultiSortedStructure") -> bool:
        return (self.sort_names == other.sort_names
                and sorted(self.signature) == sorted(other.signature))

    @cached_property
    def index_tuples(self) -> Dict[str, FrozenSet[Tuple[int, ...]]]:
        """每个关系的元组，以元素在类别中的下标表示"""
        result = {}
        for r in self.relations:
            positions = [self.sort_map[s].positions for s in r.sort_type]
            result[r.name] = frozenset(tuple(positions[k][v] for k, v in enumerate(t)) for t in r.tuples)
        return result

    def to_dict(self) -> dict:
        return {
            "sorts": [{"name": s.name, "elements": list(s.elements)} for s in self.sorts],
            "relations": [
                {"name": r.name, "type": list(r.sort_type), "tuples": [list(t) for t in r.tuples]}
                for r in self.relations
            ],
            "constants": self.constants_flag,
        }

    def digest(self) -> str:
        """结构内容的 md5 摘要，用于证书绑定"""
        payload = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.md5(payload.encode("utf-8")).hexdigest()


def structure_from_dict(payload: Mapping) -> MultiSortedStructure:
    sorts = [Sort(s["name"], tuple(s["elements"])) for s in payload.get("sorts", [])]
    relations = [Relation(r["name"], tuple(r["type"]), tuple(tuple(t) for t in r.get("tuples", [])))
                 for r in payload.get("relations", [])]
    return MultiSortedStructure.create(sorts, relations, bool(payload.get("constants", False)))


def validate(structure: MultiSortedStructure) -> MultiSortedStructure:
    """验证结构，出错时抛出带位置信息的 StructureError"""
    result = StructureValidator().validate_structure(structure)
    if not result.is_valid:
        first = result.errors[0]
        raise StructureError(first.message, first.location)
    return structure


@dataclass(frozen=True)
class Constraint:
    relation: str
    scope: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True)
class CspInstance:
    variables: Tuple[Tuple[str, str], ...]
    constraints: Tuple[Constraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple((str(v), str(s)) for v, s in self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @cached_property
    def var_sort(self) -> Dict[str, str]:
        return dict(self.variables)

    @property
    def variable_names(self) -> Tuple[str, ...]:
        return tuple(v for v, _ in self.variables)

    def to_dict(self) -> dict:
        return {
            "variables": [{"name": v, "sort": s} for v, s in self.variables],
            "constraints": [{"relation": c.relation, "scope": list(c.scope)} for c in self.constraints],
        }


def instance_from_dict(payload: Mapping) -> CspInstance:
    variables = [(v["name"], v["sort"]) for v in payload.get("variables", [])]
    constraints = [Constraint(c["relation"], tuple(c["scope"])) for c in payload.get("constraints", [])]
    return CspInstance(tuple(variables), tuple(constraints))


def validate_instance(instance: CspInstance, structure: MultiSortedStructure) -> CspInstance:
    """检查实例的变量类别与约束作用域是否与结构签名一致"""
    if len(instance.var_sort) != len(instance.variables):
        raise StructureError("变量名称重复")
    for name, sort in instance.variables:
        if sort not in structure.sort_map:
            raise StructureError(f"未知类别 {sort}", f"variable {name}")
    for index, c in enumerate(instance.constraints):
        where = f"constraint {index}"
        relation = structure.relation(c.relation)
        if len(c.scope) != relation.arity:
            raise StructureError(f"作用域长度 {len(c.scope)} 与关系元数 {relation.arity} 不符", where)
        for var, sort in zip(c.scope, relation.sort_type):
            if var not in instance.var_sort:
                raise StructureError(f"未声明的变量 {var}", where)
            if instance.var_sort[var] != sort:
                raise StructureError(f"变量 {var} 的类别与关系类型不符", where)
    return instance


class MultiSortedMap:
    """按类别分别给出的映射 (h_i)"""
    __slots__ = ("_tables",)

    def __init__(self, tables: Mapping[str, Mapping[str, str]]):
        self._tables = {s: dict(t) for s, t in tables.items()}

    @classmethod
    def identity(cls, structure: MultiSortedStructure) -> "MultiSortedMap":
        return cls({s.name: {e: e for e in s.elements} for s in structure.sorts})

    @property
    def tables(self) -> Dict[str, Dict[str, str]]:
        return {s: dict(t) for s, t in self._tables.items()}

    def apply(self, sort: str, element: str) -> str:
        return self._tables[sort][element]

    def apply_tuple(self, sort_type: Sequence[str], row: Sequence[str]) -> Row:
        return tuple(self._tables[s][v] for s, v in zip(sort_type, row))

    def compose(self, other: "MultiSortedMap") -> "MultiSortedMap":
        """返回 self ∘ other（先 other 后 self）"""
        return MultiSortedMap({s: {e: self._tables[s][v] for e, v in t.items()} for s, t in other._tables.items()})

    def inverse(self) -> "MultiSortedMap":
        return MultiSortedMap({s: {v: e for e, v in t.items()} for s, t in self._tables.items()})

    def is_identity(self) -> bool:
        return all(e == v for t in self._tables.values() for e, v in t.items())

    def fixed_points(self) -> Dict[str, List[str]]:
        return {s: [e for e, v in t.items() if e == v] for s, t in self._tables.items()}

    def key(self) -> Tuple:
        return tuple(sorted((s, tuple(sorted(t.items()))) for s, t in self._tables.items()))

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiSortedMap) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"MultiSortedMap({self._tables})"

    def to_dict(self) -> Dict[str, Dict[str, str]]:
        return self.tables


def _require_similar(h: MultiSortedStructure, g: MultiSortedStructure, where: str) -> None:
    if not h.is_similar(g):
        raise StructureError("两个结构的签名不相似", where)


def product(h: MultiSortedStructure, g: MultiSortedStructure) -> MultiSortedStructure:
    """按类别的直积 H × G"""
    _require_similar(h, g, "product")
    sorts = [
        Sort(s.name, tuple(tuple_name((a, b)) for a in s.elements for b in g.sort(s.name).elements))
        for s in h.sorts
    ]
    relations = []
    for r in h.relations:
        other = g.relation(r.name)
        rows = [tuple(tuple_name((t[k], u[k])) for k in range(r.arity)) for t in r.tuples for u in other.tuples]
        relations.append(Relation(r.name, r.sort_type, tuple(rows)))
    return MultiSortedStructure.create(sorts, relations, check=False)


def power(h: MultiSortedStructure, exponent: int) -> MultiSortedStructure:
    """笛卡尔幂 H^exponent"""
    if exponent < 1:
        raise StructureError("幂次必须至少为1", "power")
    sorts = [Sort(s.name, tuple(tuple_name(c) for c in itertools.product(s.elements, repeat=exponent)))
             for s in h.sorts]
    relations = []
    for r in h.relations:
        rows = [tuple(tuple_name(t[k] for t in combo) for k in range(r.arity))
                for combo in itertools.product(r.tuples, repeat=exponent)]
        relations.append(Relation(r.name, r.sort_type, tuple(rows)))
    return MultiSortedStructure.create(sorts, relations, check=False)


def spectrum(h: MultiSortedStructure) -> Tuple[int, ...]:
    """谱：第 j 项为大小恰为 j 的非空类别个数，末尾零截断"""
    sizes = [s.size for s in h.sorts if s.size >= 1]
    if not sizes:
        return ()
    counts = [0] * max(sizes)
    for size in sizes:
        counts[size - 1] += 1
    return tuple(counts)


def spectrum_less(first: Sequence[int], second: Sequence[int]) -> bool:
    """谱的严格序：补零后从最高项开始比较"""
    length = max(len(first), len(second))
    a = list(first) + [0] * (length - len(first))
    b = list(second) + [0] * (length - len(second))
    for j in range(length - 1, -1, -1):
        if a[j] != b[j]:
            return a[j] < b[j]
    return False


def expand(h: MultiSortedStructure, extra: Iterable[Relation]) -> MultiSortedStructure:
    """在签名中加入新关系，名称不得冲突"""
    extra = list(extra)
    names = set(h.relation_map)
    for r in extra:
        if r.name in names:
            raise StructureError("扩展关系与已有关系重名", f"relation {r.name}")
        names.add(r.name)
    return MultiSortedStructure.create(h.sorts, list(h.relations) + extra, h.constants_flag)


def add_constants(h: MultiSortedStructure) -> MultiSortedStructure:
    """为每个类别的每个元素加入单点常量关系"""
    extra = [Relation(constant_name(s.name, e), (s.name,), ((e,),))
             for s in h.sorts for e in s.elements if constant_name(s.name, e) not in h.relation_map]
    expanded = expand(h, extra) if extra else h
    return MultiSortedStructure.create(expanded.sorts, expanded.relations, True)


def add_equalities(h: MultiSortedStructure) -> MultiSortedStructure:
    extra = [Relation(equality_name(s.name), (s.name, s.name), tuple((e, e) for e in s.elements))
             for s in h.sorts if equality_name(s.name) not in h.relation_map]
    return expand(h, extra) if extra else h


def add_domains(h: MultiSortedStructure) -> MultiSortedStructure:
    """为每个类别加入全域一元关系 dom[sort]"""
    extra = [Relation(domain_name(s.name), (s.name,), tuple((e,) for e in s.elements))
             for s in h.sorts if domain_name(s.name) not in h.relation_map]
    return expand(h, extra) if extra else h


def induced_substructure(h: MultiSortedStructure, subsets: Mapping[str, Iterable[str]]) -> MultiSortedStructure:
    """诱导子结构；未给出的类别保持完整，关系名称不变"""
    unknown_sorts = set(subsets) - set(h.sort_map)
    if unknown_sorts:
        raise StructureError(f"未知类别 {sorted(unknown_sorts)[0]}", "induced_substructure")
    sorts = []
    for s in h.sorts:
        if s.name in subsets:
            wanted = set(subsets[s.name])
            stray = wanted - set(s.elements)
            if stray:
                raise StructureError(f"元素 {sorted(stray)[0]} 不属于类别 {s.name}", "induced_substructure")
            sorts.append(Sort(s.name, tuple(e for e in s.elements if e in wanted)))
        else:
            sorts.append(s)
    keep = {s.name: set(s.elements) for s in sorts}
    relations = [
        Relation(r.name, r.sort_type,
                 tuple(t for t in r.tuples if all(v in keep[srt] for v, srt in zip(t, r.sort_type))))
        for r in h.relations
    ]
    full = all(a.size == b.size for a, b in zip(sorts, h.sorts))
    return MultiSortedStructure.create(sorts, relations, h.constants_flag and full, check=False)


def _globally_unique(h: MultiSortedStructure) -> bool:
    names = [e for s in h.sorts for e in s.elements]
    return len(names) == len(set(names))


def element_variable(g: MultiSortedStructure, sort: str, element: str) -> str:
    """结构作为实例时元素对应的变量名"""
    return element if _globally_unique(g) else f"{sort}:{element}"


def structure_as_instance(g: MultiSortedStructure, h: Optional[MultiSortedStructure] = None) -> CspInstance:
    """把结构 G 看成实例：元素为变量，元组为约束"""
    if h is not None:
        _require_similar(g, h, "structure_as_instance")
    unique = _globally_unique(g)

    def var(sort, element):
        return element if unique else f"{sort}:{element}"

    variables = tuple((var(s.name, e), s.name) for s in g.sorts for e in s.elements)
    constraints = tuple(
        Constraint(r.name, tuple(var(srt, v) for v, srt in zip(t, r.sort_type)))
        for r in g.relations for t in r.tuples
    )
    return CspInstance(variables, constraints)


def instance_as_structure(instance: CspInstance, h: MultiSortedStructure) -> MultiSortedStructure:
    """把实例看成与 H 相似的结构"""
    validate_instance(instance, h)
    sorts = [Sort(s.name, tuple(v for v, srt in instance.variables if srt == s.name)) for s in h.sorts]
    relations = [
        Relation(r.name, r.sort_type, tuple(c.scope for c in instance.constraints if c.relation == r.name))
        for r in h.relations
    ]
    return MultiSortedStructure.create(sorts, relations, check=False)


def iter_isomorphisms(h: MultiSortedStructure, g: MultiSortedStructure) -> Iterator[MultiSortedMap]:
    """按规范顺序枚举 H 到 G 的所有同构"""
    if not h.is_similar(g):
        return
    if any(s.size != g.sort(s.name).size for s in h.sorts):
        return
    if any(len(r) != len(g.relation(r.name)) for r in h.relations):
        return

    order = [(s.name, e) for s in h.sorts for e in s.elements]
    position = {key: k for k, key in enumerate(order)}
    checks: List[List[Tuple[Relation, Row]]] = [[] for _ in order]
    for r in h.relations:
        for t in r.tuples:
            last = max(position[(srt, v)] for v, srt in zip(t, r.sort_type))
            checks[last].append((r, t))
    targets = {r.name: g.relation(r.name).tuple_set for r in h.relations}
    assignment: Dict[Tuple[str, str], str] = {}
    used: Dict[str, set] = {s.name: set() for s in h.sorts}

    def rec(k: int) -> Iterator[MultiSortedMap]:
        if k == len(order):
            tables: Dict[str, Dict[str, str]] = {s.name: {} for s in h.sorts}
            for (srt, e), v in assignment.items():
                tables[srt][e] = v
            yield MultiSortedMap(tables)
            return
        srt, e = order[k]
        for target in g.sort(srt).elements:
            if target in used[srt]:
                continue
            assignment[(srt, e)] = target
            used[srt].add(target)
            if all(tuple(assignment[(st, v)] for v, st in zip(t, r.sort_type)) in targets[r.name]
                   for r, t in checks[k]):
                yield from rec(k + 1)
            used[srt].discard(target)
            del assignment[(srt, e)]

    yield from rec(0)


def find_isomorphism(h: MultiSortedStructure, g: MultiSortedStructure) -> Optional[MultiSortedMap]:
    return next(iter_isomorphisms(h, g), None)
