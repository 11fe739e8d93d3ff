"""
模 p 计数量词公式 (p-mpp) 模块

公式的求值、p-投影、有界闭包搜索、p-子代数与 p-保守性、
H† 的构造，以及针对闭包的 Mal'tsev 反例引导精化。
"""
import itertools
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from config.search_config import search_config
from config.settings import settings
from modcsp.engine import SearchSpace
from modcsp.exceptions import PreconditionError, StructureError
from modcsp.homcount import require_prime
from modcsp.polyclone import OperationTable, enumerate_polymorphisms, has_maltsev
from modcsp.structures import MultiSortedStructure, Relation, expand, make_relation

logger = logging.getLogger(__name__)

EQUALITY = "="
Row = Tuple[str, ...]
Binding = Tuple[str, str]


@dataclass(frozen=True)
class Atom:
    relation: str
    scope: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True)
class MppFormula:
    """
    ∃^{≡p} B_1 ... ∃^{≡p} B_m [atoms]，块按从外到内排列

    free 与每个块中的变量都带类别：(变量, 类别)。
    """
    free: Tuple[Binding, ...]
    blocks: Tuple[Tuple[Binding, ...], ...] = ()
    atoms: Tuple[Atom, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(tuple(b) for b in self.free))
        object.__setattr__(self, "blocks", tuple(tuple(tuple(b) for b in block) for block in self.blocks))
        object.__setattr__(self, "atoms", tuple(self.atoms))

    @property
    def free_vars(self) -> Tuple[str, ...]:
        return tuple(v for v, _ in self.free)

    @property
    def depth(self) -> int:
        return sum(1 for block in self.blocks if block)

    @property
    def atom_count(self) -> int:
        return len(self.atoms)

    def sorts(self) -> Dict[str, str]:
        result = dict(self.free)
        for block in self.blocks:
            for v, s in block:
                if v in result:
                    raise StructureError(f"变量 {v} 被重复约束", "formula")
                result[v] = s
        return result

    def to_dict(self) -> dict:
        return {
            "free": [[v, s] for v, s in self.free],
            "blocks": [[[v, s] for v, s in block] for block in self.blocks],
            "atoms": [{"relation": a.relation, "scope": list(a.scope)} for a in self.atoms],
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    def rank(self) -> Tuple[int, int, str]:
        return self.atom_count, self.depth, self.serialize()


def formula_from_dict(payload: Mapping) -> MppFormula:
    def binding(item):
        if isinstance(item, Mapping):
            return str(item["var"]), str(item["sort"])
        return str(item[0]), str(item[1])

    return MppFormula(
        tuple(binding(b) for b in payload.get("free", [])),
        tuple(tuple(binding(b) for b in block) for block in payload.get("blocks", [])),
        tuple(Atom(a["relation"], tuple(a["scope"])) for a in payload.get("atoms", [])),
    )


def _lookup(name: str, structure: MultiSortedStructure, env: Optional[Mapping[str, Relation]]) -> Relation:
    if env and name in env:
        return env[name]
    return structure.relation(name)


def _index_rows(relation: Relation, structure: MultiSortedStructure) -> FrozenSet[Tuple[int, ...]]:
    positions = [structure.sort(s).positions for s in relation.sort_type]
    try:
        return frozenset(tuple(positions[k][v] for k, v in enumerate(t)) for t in relation.tuples)
    except KeyError as exc:
        raise StructureError(f"关系 {relation.name} 含有不属于结构的元素 {exc.args[0]}") from None


def evaluate_formula(formula: MppFormula, structure: MultiSortedStructure, p: int,
                     env: Optional[Mapping[str, Relation]] = None,
                     name: str = "phi") -> Tuple[Relation, bool]:
    """
    求公式定义的关系，并判断是否严格（每个保留的元组在每一块的计数模 p 都为 1）

    Returns:
        (关系, 是否严格)
    """
    p = require_prime(p)
    sorts = formula.sorts()
    order = [v for v, _ in formula.free] + [v for block in formula.blocks for v, _ in block]
    index = {v: k for k, v in enumerate(order)}
    domains = []
    for v in order:
        domains.append(list(range(structure.sort(sorts[v]).size)))

    constraints = []
    for atom in formula.atoms:
        for v in atom.scope:
            if v not in index:
                raise StructureError(f"原子中出现未声明的变量 {v}", f"atom {atom.relation}")
        if atom.relation == EQUALITY:
            if len(atom.scope) != 2 or sorts[atom.scope[0]] != sorts[atom.scope[1]]:
                raise StructureError("等式原子必须连接两个同类别变量", "atom =")
            size = structure.sort(sorts[atom.scope[0]]).size
            constraints.append(((index[atom.scope[0]], index[atom.scope[1]]),
                                frozenset((i, i) for i in range(size))))
            continue
        relation = _lookup(atom.relation, structure, env)
        if len(atom.scope) != relation.arity:
            raise StructureError(f"作用域长度与关系 {relation.name} 的元数不符", f"atom {atom.relation}")
        for v, s in zip(atom.scope, relation.sort_type):
            if sorts[v] != s:
                raise StructureError(f"变量 {v} 的类别与关系类型不符", f"atom {atom.relation}")
        constraints.append((tuple(index[v] for v in atom.scope), _index_rows(relation, structure)))

    space = SearchSpace(domains, constraints)
    current = set(space.iter_solutions())
    strict = True
    boundaries = [len(formula.free)]
    for block in formula.blocks:
        boundaries.append(boundaries[-1] + len(block))
    for level in range(len(formula.blocks), 0, -1):
        prefix = boundaries[level - 1]
        counts = Counter(t[:prefix] for t in current)
        current = set()
        for t, c in counts.items():
            residue = c % p
            if residue:
                current.add(t)
                if residue != 1:
                    strict = False

    free_elements = [structure.sort(s).elements for _, s in formula.free]
    rows = [tuple(free_elements[k][i] for k, i in enumerate(t)) for t in current]
    relation = make_relation(name, tuple(s for _, s in formula.free), rows, structure.sort_map)
    return relation, strict


def eval_mpp(formula: MppFormula, structure: MultiSortedStructure, p: int,
             env: Optional[Mapping[str, Relation]] = None, name: str = "phi") -> Relation:
    return evaluate_formula(formula, structure, p, env, name)[0]


def is_strict(formula: MppFormula, structure: MultiSortedStructure, p: int,
              env: Optional[Mapping[str, Relation]] = None) -> bool:
    return evaluate_formula(formula, structure, p, env)[1]


def ext_counts(relation: Relation, prefix: Sequence[str], coords: Sequence[int], p: int) -> Tuple[int, int]:
    """在指定坐标上取值为 prefix 的元组个数，以及它模 p 的余数"""
    p = require_prime(p)
    prefix = tuple(prefix)
    exact = sum(1 for t in relation.tuples if tuple(t[i] for i in coords) == prefix)
    return exact, exact % p


def pr_p(relation: Relation, coords: Sequence[int], p: int, name: Optional[str] = None) -> Relation:
    """p-投影：保留扩展个数模 p 非零的投影元组"""
    p = require_prime(p)
    counts = Counter(tuple(t[i] for i in coords) for t in relation.tuples)
    rows = sorted(t for t, c in counts.items() if c % p)
    return Relation(name or f"pr[{relation.name}]", tuple(relation.sort_type[i] for i in coords), tuple(rows))


@dataclass(frozen=True)
class ClosureBudget:
    max_atoms: int
    max_free_arity: int
    max_depth: int
    max_size: int
    max_relations: int

    @classmethod
    def from_config(cls, **overrides) -> "ClosureBudget":
        return cls(**search_config.merged_budget('closure', overrides))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DefinedRelation:
    relation: Relation
    formula: MppFormula
    structure_digest: str

    @property
    def atoms(self) -> int:
        return self.formula.atom_count

    @property
    def depth(self) -> int:
        return self.formula.depth


@dataclass
class ClosureResult:
    relations: List[DefinedRelation]
    status: str
    rounds: int
    budget: ClosureBudget

    def by_content(self) -> Dict[Tuple, DefinedRelation]:
        return {(d.relation.sort_type, d.relation.tuple_set): d for d in self.relations}


def normalize(formula: MppFormula) -> MppFormula:
    """自由变量依次改名为 v0, v1, ...，约束变量依次改名为 u0, u1, ..."""
    mapping = {}
    for k, (v, _) in enumerate(formula.free):
        mapping[v] = f"v{k}"
    n = 0
    for block in formula.blocks:
        for v, _ in block:
            mapping[v] = f"u{n}"
            n += 1
    blocks = tuple(tuple((mapping[v], s) for v, s in block) for block in formula.blocks if block)
    return MppFormula(
        tuple((mapping[v], s) for v, s in formula.free),
        blocks,
        tuple(Atom(a.relation, tuple(mapping[v] for v in a.scope)) for a in formula.atoms),
    )


def _rename(formula: MppFormula, mapping: Mapping[str, str]) -> MppFormula:
    return MppFormula(
        tuple((mapping.get(v, v), s) for v, s in formula.free),
        tuple(tuple((mapping.get(v, v), s) for v, s in block) for block in formula.blocks),
        tuple(Atom(a.relation, tuple(mapping.get(v, v) for v in a.scope)) for a in formula.atoms),
    )


def quantify_formula(formula: MppFormula, coords: Iterable[int]) -> MppFormula:
    coords = set(coords)
    block = tuple(b for k, b in enumerate(formula.free) if k in coords)
    free = tuple(b for k, b in enumerate(formula.free) if k not in coords)
    return normalize(MppFormula(free, (block,) + formula.blocks, formula.atoms))


def identify_formula(formula: MppFormula, keep: int, drop: int) -> MppFormula:
    names = formula.free_vars
    renamed = _rename(MppFormula(formula.free, formula.blocks, formula.atoms), {names[drop]: names[keep]})
    free = tuple(b for k, b in enumerate(renamed.free) if k != drop)
    return normalize(MppFormula(free, renamed.blocks, renamed.atoms))


def join_formula(first: MppFormula, second: MppFormula, mapping: Sequence[Optional[int]]) -> MppFormula:
    """
    合取两个公式

    Args:
        mapping: second 的每个自由坐标对应 first 的坐标下标，None 表示新坐标（追加在末尾）
    """
    first = normalize(first)
    second = normalize(second)
    names = {}
    fresh = []
    for j, (v, s) in enumerate(second.free):
        if mapping[j] is None:
            names[v] = f"n{j}"
            fresh.append((f"n{j}", s))
        else:
            names[v] = first.free[mapping[j]][0]
    for block in second.blocks:
        for v, _ in block:
            names[v] = f"w{v[1:]}"
    second = _rename(second, names)
    depth = max(len(first.blocks), len(second.blocks))
    b1 = ((),) * (depth - len(first.blocks)) + first.blocks
    b2 = ((),) * (depth - len(second.blocks)) + second.blocks
    blocks = tuple(x + y for x, y in zip(b1, b2))
    return normalize(MppFormula(first.free + tuple(fresh), blocks, first.atoms + second.atoms))


def _content_key(sort_type: Tuple[str, ...], rows: FrozenSet[Row]) -> Tuple:
    """内容在坐标置换下的规范键"""
    best = None
    for perm in itertools.permutations(range(len(sort_type))):
        candidate = (tuple(sort_type[i] for i in perm), tuple(sorted(tuple(t[i] for i in perm) for t in rows)))
        if best is None or candidate < best:
            best = candidate
    return best


@dataclass
class _Entry:
    sort_type: Tuple[str, ...]
    rows: FrozenSet[Row]
    formula: MppFormula


def _identify_rows(rows: Iterable[Row], keep: int, drop: int) -> FrozenSet[Row]:
    return frozenset(t[:drop] + t[drop + 1:] for t in rows if t[keep] == t[drop])


def _quantify_rows(rows: Iterable[Row], coords: Iterable[int], arity: int, p: int) -> FrozenSet[Row]:
    coords = set(coords)
    kept = [i for i in range(arity) if i not in coords]
    counts = Counter(tuple(t[i] for i in kept) for t in rows)
    return frozenset(t for t, c in counts.items() if c % p)


def _join_rows(first: _Entry, second: _Entry, mapping: Sequence[Optional[int]]) -> FrozenSet[Row]:
    shared = [(j, i) for j, i in enumerate(mapping) if i is not None]
    fresh = [j for j, i in enumerate(mapping) if i is None]
    buckets: Dict[Tuple, List[Row]] = {}
    for u in second.rows:
        buckets.setdefault(tuple(u[j] for j, _ in shared), []).append(u)
    result = set()
    for t in first.rows:
        for u in buckets.get(tuple(t[i] for _, i in shared), ()):
            result.add(t + tuple(u[j] for j in fresh))
    return frozenset(result)


def _join_mappings(first: Tuple[str, ...], second: Tuple[str, ...]) -> Iterable[Tuple[Optional[int], ...]]:
    """second 的坐标到 first 坐标的单射部分映射，至少共享一个坐标"""
    def rec(j, used):
        if j == len(second):
            yield ()
            return
        for rest in rec(j + 1, used):
            yield (None,) + rest
        for i, s in enumerate(first):
            if s == second[j] and i not in used:
                for rest in rec(j + 1, used | {i}):
                    yield (i,) + rest

    for mapping in rec(0, frozenset()):
        if any(i is not None for i in mapping):
            yield mapping


def _seeds(structure: MultiSortedStructure) -> List[_Entry]:
    entries = []
    for r in structure.relations:
        free = tuple((f"v{k}", s) for k, s in enumerate(r.sort_type))
        entries.append(_Entry(r.sort_type, r.tuple_set,
                              MppFormula(free, (), (Atom(r.name, tuple(v for v, _ in free)),))))
    for s in structure.sorts:
        entries.append(_Entry((s.name, s.name), frozenset((e, e) for e in s.elements),
                              MppFormula((("v0", s.name), ("v1", s.name)), (), (Atom(EQUALITY, ("v0", "v1")),))))
        entries.append(_Entry((s.name,), frozenset((e,) for e in s.elements),
                              MppFormula((("v0", s.name),), (), ())))
    return entries


def closure_search(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                   stop_when: Optional[Callable[[DefinedRelation], bool]] = None,
                   shuffle_seed: Optional[int] = None) -> ClosureResult:
    """
    有界同步轮次闭包搜索 ⟨H⟩_p

    每轮对上一轮新得到的关系做坐标等同、块量化和两两合取；
    同一内容只保留 (原子数, 深度, 序列化) 最小的公式。空关系不保留。
    """
    p = require_prime(p)
    budget = budget or ClosureBudget.from_config()
    digest = structure.digest()
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None

    known: Dict[Tuple, _Entry] = {}
    ordered: List[Tuple[Tuple, _Entry]] = []
    result: List[DefinedRelation] = []

    def admit(batch: Dict[Tuple, _Entry]) -> Optional[str]:
        fresh = sorted(batch.items(), key=lambda kv: (len(kv[1].sort_type), kv[1].formula.rank(), kv[0]))
        for key, entry in fresh:
            if len(result) >= budget.max_relations:
                return "budget-exhausted"
            known[key] = entry
            ordered.append((key, entry))
            defined = DefinedRelation(
                make_relation(f"d{len(result)}", entry.sort_type, entry.rows, structure.sort_map),
                entry.formula, digest)
            result.append(defined)
            if stop_when is not None and stop_when(defined):
                return "stopped"
        return None

    def offer(batch: Dict[Tuple, _Entry], sort_type, rows, formula):
        if not rows or len(rows) > budget.max_size:
            return
        if formula.atom_count > budget.max_atoms or formula.depth > budget.max_depth:
            return
        key = _content_key(sort_type, rows)
        if key in known:
            return
        current = batch.get(key)
        if current is None or formula.rank() < current.formula.rank():
            batch[key] = _Entry(sort_type, rows, formula)

    seeds: Dict[Tuple, _Entry] = {}
    for entry in _seeds(structure):
        offer(seeds, entry.sort_type, entry.rows, entry.formula)
    status = admit(seeds)
    new = [e for _, e in ordered]
    rounds = 0
    while status is None and new:
        rounds += 1
        batch: Dict[Tuple, _Entry] = {}
        everything = [e for _, e in ordered]
        new_ids = {id(e) for e in new}
        if rng is not None:
            everything = everything[:]
            rng.shuffle(everything)

        for entry in new:
            k = len(entry.sort_type)
            for i, j in itertools.combinations(range(k), 2):
                if entry.sort_type[i] == entry.sort_type[j]:
                    offer(batch, entry.sort_type[:j] + entry.sort_type[j + 1:],
                          _identify_rows(entry.rows, i, j), identify_formula(entry.formula, i, j))
            if entry.formula.depth + 1 <= budget.max_depth:
                for size in range(1, k):
                    for coords in itertools.combinations(range(k), size):
                        offer(batch, tuple(s for c, s in enumerate(entry.sort_type) if c not in coords),
                              _quantify_rows(entry.rows, coords, k, p), quantify_formula(entry.formula, coords))

        for a, first in enumerate(everything):
            for second in everything[a:]:
                if id(first) not in new_ids and id(second) not in new_ids:
                    continue
                if first.formula.atom_count + second.formula.atom_count > budget.max_atoms:
                    continue
                for mapping in _join_mappings(first.sort_type, second.sort_type):
                    fresh = [j for j, i in enumerate(mapping) if i is None]
                    width = len(first.sort_type) + len(fresh)
                    if width > budget.max_free_arity + 1:
                        continue
                    sort_type = first.sort_type + tuple(second.sort_type[j] for j in fresh)
                    rows = _join_rows(first, second, mapping)
                    if not rows:
                        continue
                    formula = join_formula(first.formula, second.formula, mapping)
                    if width <= budget.max_free_arity:
                        offer(batch, sort_type, rows, formula)
                    elif formula.depth + 1 <= budget.max_depth:
                        for c in range(width):
                            offer(batch, sort_type[:c] + sort_type[c + 1:],
                                  _quantify_rows(rows, (c,), width, p), quantify_formula(formula, (c,)))

        before = len(ordered)
        status = admit(batch)
        new = [e for _, e in ordered[before:]]
        logger.debug(f"闭包第 {rounds} 轮: 新增 {len(new)} 个关系, 共 {len(result)} 个")

    status = status or "fixpoint"
    logger.info(f"闭包搜索结束: {status}, {len(result)} 个关系, {rounds} 轮")
    return ClosureResult(result, status, rounds, budget)


@dataclass
class ConservativityResult:
    status: str  # "certified-yes" | "unknown"
    subalgebras: Dict[str, List[Tuple[FrozenSet[str], DefinedRelation]]]
    missing: Dict[str, List[FrozenSet[str]]]


def _all_subsets(elements: Sequence[str]) -> List[FrozenSet[str]]:
    return [frozenset(c) for size in range(1, len(elements) + 1) for c in itertools.combinations(elements, size)]


def p_subalgebras(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                  stop_when_complete: bool = True) -> Dict[str, List[Tuple[FrozenSet[str], DefinedRelation]]]:
    """
    在预算内找到的 p-mpp 可定义一元关系（按类别、按子集大小排列）

    找齐所有非空子集后提前停止。
    """
    wanted = {s.name: set(_all_subsets(s.elements)) for s in structure.sorts}
    found: Dict[str, Dict[FrozenSet[str], DefinedRelation]] = {s.name: {} for s in structure.sorts}

    def record(defined: DefinedRelation) -> bool:
        rel = defined.relation
        if rel.arity == 1:
            subset = frozenset(t[0] for t in rel.tuples)
            found[rel.sort_type[0]].setdefault(subset, defined)
        return stop_when_complete and all(set(found[s]) >= wanted[s] for s in wanted)

    closure_search(structure, p, budget, stop_when=record)
    order = {s.name: s.positions for s in structure.sorts}
    return {
        sort: sorted(items.items(), key=lambda kv: (len(kv[0]), sorted(order[sort][e] for e in kv[0])))
        for sort, items in found.items()
    }


def is_p_conservative(structure: MultiSortedStructure, p: int,
                      budget: Optional[ClosureBudget] = None) -> ConservativityResult:
    subalgebras = p_subalgebras(structure, p, budget)
    missing = {}
    for s in structure.sorts:
        have = {subset for subset, _ in subalgebras[s.name]}
        lacking = [subset for subset in _all_subsets(s.elements) if subset not in have]
        if lacking:
            missing[s.name] = lacking
    status = "unknown" if missing else "certified-yes"
    logger.info(f"p-保守性: {status}")
    return ConservativityResult(status, subalgebras, missing)


@dataclass
class DaggerResult:
    structure: MultiSortedStructure
    killers: List[Tuple[str, DefinedRelation]]
    kill_list: List[Tuple[OperationTable, Optional[str]]]
    closure_status: str
    limitations: List[str] = field(default_factory=list)

    @property
    def survivors(self) -> List[OperationTable]:
        return [f for f, killer in self.kill_list if killer is None]


def build_H_dagger(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                   polymorphisms: Optional[List[OperationTable]] = None) -> DaggerResult:
    """
    H† = H 加上能"杀死"三元多态的闭包关系

    每个三元多态被映射到它第一个不保持的闭包关系；杀手关系依次命名为 q0, q1, ...
    """
    closure = closure_search(structure, p, budget)
    polymorphisms = enumerate_polymorphisms(structure, 3) if polymorphisms is None else polymorphisms
    cap = settings.KILL_CHECK_MAX_TUPLES
    limitations: List[str] = []
    names: Dict[str, str] = {}
    killers: List[Tuple[str, DefinedRelation]] = []
    kill_list = []
    for f in polymorphisms:
        killer_name = None
        for defined in closure.relations:
            if f.preserves(defined.relation, cap, limitations) is not None:
                key = defined.relation.name
                if key not in names:
                    names[key] = f"q{len(killers)}"
                    killers.append((names[key], defined))
                killer_name = names[key]
                break
        kill_list.append((f, killer_name))
    expanded = expand(structure, [d.relation.renamed(name) for name, d in killers]) if killers else structure
    logger.info(f"H† 构造完成: {len(killers)} 个杀手关系, {sum(1 for _, k in kill_list if k is None)} 个多态存活")
    return DaggerResult(expanded, killers, kill_list, closure.status, limitations)


@dataclass
class KillRecord:
    candidate: OperationTable
    killer: DefinedRelation
    violation: Tuple[Row, ...]
    name: str


@dataclass
class NoMaltsevForHItself:
    """H 本身没有 Mal'tsev 多态"""
    kind: str = "no-maltsev-for-H"


@dataclass
class NoMaltsevCertified:
    """加入杀手关系后不再有 Mal'tsev 多态，可重放验证"""
    killers: List[KillRecord]
    budget: ClosureBudget
    kind: str = "no-maltsev-certified"

    def expanded(self, structure: MultiSortedStructure) -> MultiSortedStructure:
        return _expand_with_killers(structure, self.killers)

    def replay(self, structure: MultiSortedStructure, p: int) -> bool:
        """重新求值每个杀手关系，检查违反三元组并确认扩展结构没有 Mal'tsev 多态"""
        for record in self.killers:
            relation = eval_mpp(record.killer.formula, structure, p)
            if relation.tuple_set != record.killer.relation.tuple_set:
                return False
            image = record.candidate.apply_rows(relation.sort_type, record.violation)
            if any(v not in relation for v in record.violation) or image in relation:
                return False
        return has_maltsev(self.expanded(structure)) is None


@dataclass
class MaltsevUpToBudget:
    """
    预算内仍有 Mal'tsev 候选

    limitations 列出因关系过大而没有检查保持性的闭包关系，这些关系可能本可杀死候选。
    """
    candidate: OperationTable
    budget: ClosureBudget
    status: str
    killers: List[KillRecord] = field(default_factory=list)
    limitations: List[str] = field(default_factory=list)
    kind: str = "maltsev-up-to-budget"


MaltsevVerdict = Union[NoMaltsevForHItself, NoMaltsevCertified, MaltsevUpToBudget]


def _expand_with_killers(structure: MultiSortedStructure, killers: Sequence[KillRecord]) -> MultiSortedStructure:
    seen = {}
    extra = []
    for record in killers:
        key = record.name
        if key not in seen:
            seen[key] = True
            extra.append(record.killer.relation.renamed(record.name))
    return expand(structure, extra) if extra else structure


def maltsev_for_closure(structure: MultiSortedStructure, p: int,
                        budget: Optional[ClosureBudget] = None) -> MaltsevVerdict:
    """
    判断 ⟨H⟩_p（在预算内）是否有 Mal'tsev 多态

    反例引导：候选运算被某个闭包关系杀死时，把该关系加入签名重新求候选，
    并对已生成的关系重新检查。
    """
    p = require_prime(p)
    budget = budget or ClosureBudget.from_config()
    candidate = has_maltsev(structure)
    if candidate is None:
        logger.info("H 本身没有 Mal'tsev 多态")
        return NoMaltsevForHItself()

    cap = settings.KILL_CHECK_MAX_TUPLES
    limitations: List[str] = []
    seen: List[DefinedRelation] = []
    killers: List[KillRecord] = []
    names: Dict[str, str] = {}
    state = {"candidate": candidate}

    def settle(current: Optional[OperationTable], start: int) -> Optional[OperationTable]:
        while current is not None:
            for defined in seen[start:]:
                violation = current.preserves(defined.relation, cap, limitations)
                if violation is not None:
                    key = defined.relation.name
                    names.setdefault(key, f"q{len(names)}")
                    killers.append(KillRecord(current, defined, violation, names[key]))
                    logger.info(f"候选 Mal'tsev 运算被关系 {key} 杀死")
                    current = has_maltsev(_expand_with_killers(structure, killers))
                    start = 0
                    break
            else:
                return current
        return None

    def on_relation(defined: DefinedRelation) -> bool:
        seen.append(defined)
        state["candidate"] = settle(state["candidate"], len(seen) - 1)
        return state["candidate"] is None

    closure = closure_search(structure, p, budget, stop_when=on_relation)
    if state["candidate"] is None:
        return NoMaltsevCertified(killers, budget)
    return MaltsevUpToBudget(state["candidate"], budget, closure.status, killers, limitations)


def require_no_maltsev(verdict: MaltsevVerdict) -> None:
    if isinstance(verdict, MaltsevUpToBudget):
        raise PreconditionError("闭包在预算内仍有 Mal'tsev 多态")
