"""
自同构多项式约化模块

二元化 b(H)/b(P)、置换域实例 s(P)、置换群上的 Mal'tsev 求解、
相容置换族的提取，以及用 p-自同构多项式缩小变量定义域。
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from sympy.combinatorics.permutations import Permutation

from config.settings import settings
from modcsp.exceptions import GuardExceeded, PreconditionError
from modcsp.homcount import require_prime
from modcsp.polyclone import OperationTable, p_automorphic_witness, section_orders
from modcsp.structures import (
    Constraint, CspInstance, MultiSortedStructure, Relation, Sort, add_domains, domain_name,
    tuple_name, validate_instance,
)

logger = logging.getLogger(__name__)

Perm = Tuple[int, ...]
Row = Tuple[str, ...]


def q_name(i: int, j: int, s: int, t: int) -> str:
    return f"Q[{i},{j},{s},{t}]"


@dataclass
class BinarizedPair:
    structure: MultiSortedStructure
    instance: Optional[CspInstance]
    sort_source: Dict[str, str]
    variable_source: Dict[str, int]
    q_source: Dict[str, Tuple[int, int, int, int]]
    source: Optional[CspInstance] = None


def _with_domains(structure: MultiSortedStructure) -> Tuple[MultiSortedStructure, List[Relation]]:
    full = add_domains(structure)
    return full, list(full.relations)


def binarize(structure: MultiSortedStructure) -> BinarizedPair:
    """
    b(H)：H（加上每个类别的全域关系）的每个关系成为一个类别，元素为其元组；
    Q[i,j,s,t] = {(ā, b̄) | ā[s] = b̄[t]}，i ≤ j（i = j 时 s ≤ t）
    """
    full, relations = _with_domains(structure)
    sorts = [Sort(r.name, tuple(tuple_name(t) for t in r.tuples)) for r in relations]
    q_relations = []
    q_source = {}
    for i, first in enumerate(relations):
        for j in range(i, len(relations)):
            second = relations[j]
            for s, sort_s in enumerate(first.sort_type):
                for t, sort_t in enumerate(second.sort_type):
                    if sort_s != sort_t or (i == j and s > t):
                        continue
                    rows = [(tuple_name(a), tuple_name(b)) for a in first.tuples for b in second.tuples if a[s] == b[t]]
                    name = q_name(i, j, s, t)
                    q_relations.append(Relation(name, (first.name, second.name), tuple(rows)))
                    q_source[name] = (i, j, s, t)
    result = MultiSortedStructure.create(sorts, q_relations, check=False)
    logger.debug(f"二元化: {len(sorts)} 个类别, {len(q_relations)} 个 Q 关系")
    return BinarizedPair(result, None, {r.name: r.name for r in relations}, {}, q_source)


def with_domain_constraints(instance: CspInstance, structure: MultiSortedStructure) -> CspInstance:
    """为每个变量追加全域约束 ⟨(v), dom[sort]⟩（已有时不重复）"""
    full, _ = _with_domains(structure)
    validate_instance(instance, full)
    covered = {c.scope[0] for c in instance.constraints
               if len(c.scope) == 1 and c.relation == domain_name(instance.var_sort[c.scope[0]])}
    extra = [Constraint(domain_name(sort), (v,)) for v, sort in instance.variables if v not in covered]
    return CspInstance(instance.variables, instance.constraints + tuple(extra))


def binarize_instance(instance: CspInstance, structure: MultiSortedStructure) -> BinarizedPair:
    """b(P)：每个约束一个变量 C{k}，共享变量的约束对之间加 Q 约束"""
    pair = binarize(structure)
    full, relations = _with_domains(structure)
    index = {r.name: i for i, r in enumerate(relations)}
    source = with_domain_constraints(instance, structure)
    variables = tuple((f"C{k}", c.relation) for k, c in enumerate(source.constraints))
    constraints = []
    for k, first in enumerate(source.constraints):
        for l in range(k, len(source.constraints)):
            second = source.constraints[l]
            for s, v in enumerate(first.scope):
                for t, w in enumerate(second.scope):
                    if v != w or (k == l and s >= t):
                        continue
                    i, j = index[first.relation], index[second.relation]
                    forward = s <= t if i == j else i < j
                    if forward:
                        constraints.append(Constraint(q_name(i, j, s, t), (f"C{k}", f"C{l}")))
                    else:
                        constraints.append(Constraint(q_name(j, i, t, s), (f"C{l}", f"C{k}")))
    binarized = CspInstance(variables, tuple(constraints))
    validate_instance(binarized, pair.structure)
    pair.instance = binarized
    pair.variable_source = {f"C{k}": k for k in range(len(source.constraints))}
    pair.source = source
    return pair


def transfer_solution(solution: Mapping[str, str], pair: BinarizedPair) -> Dict[str, str]:
    """P 的解 φ ↦ b(P) 的解 ψ，ψ(v_C) = φ(s_C)"""
    return {f"C{k}": tuple_name(solution[v] for v in c.scope) for k, c in enumerate(pair.source.constraints)}


def solution_from_binarized(psi: Mapping[str, str], pair: BinarizedPair) -> Dict[str, str]:
    """经由全域约束读回 P 的解"""
    result = {}
    for k, c in enumerate(pair.source.constraints):
        if len(c.scope) == 1 and c.relation == domain_name(pair.source.var_sort[c.scope[0]]):
            value = psi[f"C{k}"]
            result[c.scope[0]] = value[1:-1]
    return result


@dataclass(frozen=True)
class PermConstraint:
    first: str
    second: str
    s: int
    t: int


@dataclass
class PermDomainInstance:
    """
    s(P)：变量 C{k} 的定义域为 Sym(R_{C_k})，置换以元组下标的像给出

    约束 (φ1, φ2) ∈ S 当且仅当对所有 ā1[s] = ā2[t] 有 φ1(ā1)[s] = φ2(ā2)[t]。
    """
    variables: List[str]
    relations: Dict[str, Tuple[Row, ...]]
    domains: Dict[str, List[Perm]]
    constraints: List[PermConstraint]

    def classes(self, var: str, position: int, values: Iterable[str]) -> List[List[int]]:
        rows = self.relations[var]
        return [[i for i, t in enumerate(rows) if t[position] == value] for value in values]

    def common_values(self, c: PermConstraint) -> List[str]:
        left = {t[c.s] for t in self.relations[c.first]}
        right = {t[c.t] for t in self.relations[c.second]}
        return sorted(left & right)


def _signature(perm: Perm, rows: Sequence[Row], position: int, classes: Sequence[Sequence[int]]) -> Optional[Tuple]:
    """每个公共值类在置换下的唯一像值；有类的像不唯一时返回 None"""
    images = []
    for members in classes:
        values = {rows[perm[i]][position] for i in members}
        if len(values) != 1:
            return None
        images.append(values.pop())
    return tuple(images)


def jointly_preserves(first: Sequence[Row], second: Sequence[Row], s: int, t: int,
                      phi1: Perm, phi2: Perm) -> bool:
    """直接按定义检查 (φ1, φ2) 是否保持 Q"""
    for i, a in enumerate(first):
        for j, b in enumerate(second):
            if a[s] == b[t] and first[phi1[i]][s] != second[phi2[j]][t]:
                return False
    return True


def build_sP(instance: CspInstance, structure: MultiSortedStructure, cap: Optional[int] = None,
             relations: Optional[Mapping[int, Sequence[Row]]] = None) -> PermDomainInstance:
    """
    构造 s(P)

    Args:
        relations: 约束下标到当前元组列表的覆盖（约化过程中使用）
    Raises:
        GuardExceeded: 某个约束关系的元组数超过 cap
    """
    cap = settings.SYM_CAP if cap is None else cap
    source = with_domain_constraints(instance, structure)
    full, _ = _with_domains(structure)
    rows_of: Dict[str, Tuple[Row, ...]] = {}
    for k, c in enumerate(source.constraints):
        rows = tuple(relations[k]) if relations is not None and k in relations else full.relation(c.relation).tuples
        if len(rows) > cap:
            raise GuardExceeded("sym_cap", len(rows), cap)
        rows_of[f"C{k}"] = rows
    domains = {var: list(itertools.permutations(range(len(rows)))) for var, rows in rows_of.items()}
    constraints = []
    for k, first in enumerate(source.constraints):
        for l in range(k, len(source.constraints)):
            second = source.constraints[l]
            for s, v in enumerate(first.scope):
                for t, w in enumerate(second.scope):
                    if v == w and not (k == l and s >= t):
                        constraints.append(PermConstraint(f"C{k}", f"C{l}", s, t))
    return PermDomainInstance(list(rows_of), rows_of, domains, constraints)


def perm_maltsev(x: Perm, y: Perm, z: Perm) -> Perm:
    """m(x, y, z) = z ∘ y⁻¹ ∘ x：先作用 x，再作用 y⁻¹，最后作用 z"""
    result = Permutation(list(x)) * ~Permutation(list(y)) * Permutation(list(z))
    return tuple(result.array_form)


def _allowed_pairs(sp: PermDomainInstance, c: PermConstraint) -> Tuple[Dict[Perm, Optional[Tuple]], Dict[Perm, Optional[Tuple]]]:
    values = sp.common_values(c)
    first_classes = sp.classes(c.first, c.s, values)
    second_classes = sp.classes(c.second, c.t, values)
    first = {perm: _signature(perm, sp.relations[c.first], c.s, first_classes) for perm in sp.domains[c.first]}
    second = {perm: _signature(perm, sp.relations[c.second], c.t, second_classes) for perm in sp.domains[c.second]}
    return first, second


def constraint_pairs(sp: PermDomainInstance, c: PermConstraint) -> FrozenSet[Tuple[Perm, Perm]]:
    """约束 S 的全部允许对（显式枚举，供检查使用）"""
    first, second = _allowed_pairs(sp, c)
    return frozenset((p1, p2) for p1, s1 in first.items() for p2, s2 in second.items()
                     if s1 is not None and s1 == s2)


def group_maltsev_solve(sp: PermDomainInstance, pin: Optional[Tuple[str, Perm]] = None) -> Optional[Dict[str, Perm]]:
    """
    求解 s(P)（可带一个固定），弧相容传播加最小定义域优先的回溯

    Returns:
        变量到置换的解，无解时 None
    """
    signatures = []
    for c in sp.constraints:
        first, second = _allowed_pairs(sp, c)
        signatures.append((c, first, second))
    domains = {v: list(d) for v, d in sp.domains.items()}
    if pin is not None:
        var, perm = pin
        if tuple(perm) not in set(domains[var]):
            return None
        domains[var] = [tuple(perm)]

    def propagate(doms: Dict[str, List[Perm]]) -> bool:
        changed = True
        while changed:
            changed = False
            for c, first, second in signatures:
                right = {second[q] for q in doms[c.second]} - {None}
                kept = [q for q in doms[c.first] if first[q] is not None and first[q] in right]
                if len(kept) != len(doms[c.first]):
                    doms[c.first] = kept
                    changed = True
                left = {first[q] for q in doms[c.first]} - {None}
                kept = [q for q in doms[c.second] if second[q] is not None and second[q] in left]
                if len(kept) != len(doms[c.second]):
                    doms[c.second] = kept
                    changed = True
                if not doms[c.first] or not doms[c.second]:
                    return False
        return all(doms.values())

    def solve(doms: Dict[str, List[Perm]]) -> Optional[Dict[str, Perm]]:
        if not propagate(doms):
            return None
        open_vars = [v for v in sp.variables if len(doms[v]) > 1]
        if not open_vars:
            return {v: doms[v][0] for v in sp.variables}
        var = min(open_vars, key=lambda v: (len(doms[v]), sp.variables.index(v)))
        for value in doms[var]:
            trial = {v: list(d) for v, d in doms.items()}
            trial[var] = [value]
            found = solve(trial)
            if found is not None:
                return found
        return None

    return solve(domains)


@dataclass
class ConsistentCollection:
    permutations: Dict[int, Perm]
    relations: Dict[int, Tuple[Row, ...]]

    def apply(self, k: int, row: Row) -> Row:
        rows = self.relations[k]
        return rows[self.permutations[k][rows.index(tuple(row))]]


def is_consistent(instance: CspInstance, collection: ConsistentCollection) -> bool:
    """按定义检查：在共享变量上投影一致的元组，其像在共享变量上也一致"""
    constraints = instance.constraints
    for k, l in itertools.combinations(range(len(constraints)), 2):
        first, second = constraints[k], constraints[l]
        shared = sorted(set(first.scope) & set(second.scope))
        if not shared:
            continue
        pos1 = [first.scope.index(v) for v in shared]
        pos2 = [second.scope.index(v) for v in shared]
        for a in collection.relations[k]:
            for b in collection.relations[l]:
                if tuple(a[i] for i in pos1) != tuple(b[i] for i in pos2):
                    continue
                fa, fb = collection.apply(k, a), collection.apply(l, b)
                if tuple(fa[i] for i in pos1) != tuple(fb[i] for i in pos2):
                    return False
    return True


def consistent_permutations(instance: CspInstance, structure: MultiSortedStructure,
                            pin: Optional[Tuple[int, Perm]] = None, cap: Optional[int] = None,
                            relations: Optional[Mapping[int, Sequence[Row]]] = None) -> Optional[ConsistentCollection]:
    """由 s(P)（带固定 v_{C0} = φ0）的解得到相容置换族，约束下标按追加全域约束后的实例计"""
    sp = build_sP(instance, structure, cap, relations)
    solution = group_maltsev_solve(sp, (f"C{pin[0]}", pin[1]) if pin is not None else None)
    if solution is None:
        return None
    collection = ConsistentCollection(
        {int(v[1:]): perm for v, perm in solution.items()},
        {int(v[1:]): rows for v, rows in sp.relations.items()})
    if not is_consistent(with_domain_constraints(instance, structure), collection):
        raise RuntimeError("s(P) 的解不构成相容置换族")
    return collection


def section_permutation(f: OperationTable, sort_type: Sequence[str], anchor: Row,
                        rows: Sequence[Row]) -> Optional[Perm]:
    """x ↦ f(ā, x) 作为 rows 上的置换；像不在 rows 中时返回 None"""
    index = {tuple(t): i for i, t in enumerate(rows)}
    images = []
    for t in rows:
        image = tuple(f(s, a, x) for s, a, x in zip(sort_type, anchor, t))
        if image not in index:
            return None
        images.append(index[image])
    if len(set(images)) != len(images):
        return None
    return tuple(images)


def nontrivial_orbits(f: OperationTable, sort: str, a: str) -> FrozenSet[str]:
    """f_i(a, ·) 所有非平凡轨道的并"""
    return frozenset(x for x in f.domains[sort] if f(sort, a, x) != x)


def _check_witness(f: OperationTable, p: int, witness: Tuple[str, str]) -> None:
    if p_automorphic_witness(f, p) is None:
        raise PreconditionError(f"运算不是 {p}-自同构的")
    orders = section_orders(f)
    if orders.get(tuple(witness)) != p:
        raise PreconditionError(f"截面 {witness} 的阶不是 {p}")


def split_sort_names(sort: str) -> Tuple[str, str]:
    return f"{sort}'", f"{sort}''"


def build_Hf(structure: MultiSortedStructure, f: OperationTable, p: int,
             witness: Tuple[str, str]) -> MultiSortedStructure:
    """
    H^f：类别 i 换成 H'_i = H_i − {a} 与 H''_i = H_i − B（B 为 f_i(a,·) 非平凡轨道之并），
    涉及 i 的关系 R 拆成 R'（不含 a）与 R''（不含 B 中元素）
    """
    p = require_prime(p)
    _check_witness(f, p, witness)
    sort, a = witness
    moved = nontrivial_orbits(f, sort, a)
    first, second = split_sort_names(sort)
    keep_first = tuple(e for e in structure.elements(sort) if e != a)
    keep_second = tuple(e for e in structure.elements(sort) if e not in moved)
    sorts = []
    for s in structure.sorts:
        if s.name == sort:
            sorts.extend([Sort(first, keep_first), Sort(second, keep_second)])
        else:
            sorts.append(s)
    relations = []
    for r in structure.relations:
        if sort not in r.sort_type:
            relations.append(r)
            continue
        for suffix, new_sort, allowed in (("'", first, set(keep_first)), ("''", second, set(keep_second))):
            sort_type = tuple(new_sort if s == sort else s for s in r.sort_type)
            rows = [t for t in r.tuples if all(v in allowed for v, s in zip(t, r.sort_type) if s == sort)]
            relations.append(Relation(r.name + suffix, sort_type, tuple(rows)))
    result = MultiSortedStructure.create(sorts, relations, False, check=False)
    logger.info(f"H^f: 类别 {sort} 拆成 {len(keep_first)} + {len(keep_second)} 个元素")
    return result


@dataclass
class ReductionResult:
    structure: MultiSortedStructure
    instance: CspInstance
    variable_sorts: Dict[str, str]
    ledger: List[Dict[str, object]] = field(default_factory=list)
    limitations: List[str] = field(default_factory=list)


def reduce_instance(instance: CspInstance, structure: MultiSortedStructure, f: OperationTable, p: int,
                    witness: Optional[Tuple[str, str]] = None, cap: Optional[int] = None) -> ReductionResult:
    """
    用 p-自同构多项式 f 缩小实例的定义域，保持解数模 p 不变

    1. 对每个约束中在类别 i 的位置取 a 的元组 ā，若 s(P) 加固定 f(ā,·) 无解则删去 ā
    2. 逐个变量：a 已不可达时去掉 a（类别 i'）；否则若当前实例的 s(P) 在该变量的全域约束上
       可固定为 f_i(a,·)，则去掉 f_i(a,·) 的非平凡轨道（类别 i''）；都不行时保留原类别
    """
    p = require_prime(p)
    witness = tuple(witness) if witness is not None else p_automorphic_witness(f, p)
    if witness is None:
        raise PreconditionError(f"运算不是 {p}-自同构的")
    _check_witness(f, p, witness)
    sort, a = witness
    moved = nontrivial_orbits(f, sort, a)
    first_sort, second_sort = split_sort_names(sort)
    full, _ = _with_domains(structure)
    source = with_domain_constraints(instance, structure)
    constraints = list(source.constraints)
    current: Dict[int, List[Row]] = {k: list(full.relation(c.relation).tuples) for k, c in enumerate(constraints)}
    ledger: List[Dict[str, object]] = []
    limitations: List[str] = []

    # 1. 删除不经过任何解的元组
    try:
        sp = build_sP(instance, structure, cap)
    except GuardExceeded as exc:
        sp = None
        limitations.append(f"元组删除跳过: {exc}")
        logger.warning(f"s(P) 超出上限, 跳过元组删除: {exc}")
    if sp is not None:
        deletions = []
        for k, c in enumerate(constraints):
            relation = full.relation(c.relation)
            for row in relation.tuples:
                if not any(s == sort and v == a for s, v in zip(relation.sort_type, row)):
                    continue
                perm = section_permutation(f, relation.sort_type, row, relation.tuples)
                if perm is None:
                    raise RuntimeError("f(ā,·) 不是关系上的置换")
                if group_maltsev_solve(sp, (f"C{k}", perm)) is None:
                    deletions.append((k, row))
        for k, row in deletions:
            current[k].remove(row)
            ledger.append({"kind": "delete-tuple", "constraint": k, "tuple": list(row)})

    # 2. 逐变量缩小定义域
    var_sort = source.var_sort
    domain_constraint = {c.scope[0]: k for k, c in enumerate(constraints)
                         if len(c.scope) == 1 and c.relation == domain_name(var_sort[c.scope[0]])}
    new_sorts: Dict[str, str] = {}
    for v, s in source.variables:
        if s != sort:
            new_sorts[v] = s
            continue
        reachable = any(
            row[pos] == a
            for k, c in enumerate(constraints) for pos, w in enumerate(c.scope) if w == v
            for row in current[k]
        )
        if not reachable:
            new_sorts[v] = first_sort
            ledger.append({"kind": "drop-element", "variable": v, "element": a})
            _restrict(constraints, current, v, lambda x: x != a)
            continue
        k0 = domain_constraint[v]
        rows = current[k0]
        perm = section_permutation(f, (sort,), (a,), rows)
        collection = None
        if perm is not None:
            try:
                collection = consistent_permutations(instance, structure, (k0, perm), cap, current)
            except GuardExceeded as exc:
                limitations.append(f"变量 {v} 的轨道消去跳过: {exc}")
        if collection is not None:
            new_sorts[v] = second_sort
            ledger.append({"kind": "orbit-cancel", "variable": v, "removed": sorted(moved),
                           "pin": [list(rows[i]) for i in perm]})
            _restrict(constraints, current, v, lambda x: x not in moved)
        else:
            new_sorts[v] = sort
            ledger.append({"kind": "keep", "variable": v})

    return _assemble(structure, source, constraints, current, new_sorts, witness, moved, ledger, limitations)


def _restrict(constraints: Sequence[Constraint], current: Dict[int, List[Row]], variable: str, keep) -> None:
    for k, c in enumerate(constraints):
        positions = [i for i, w in enumerate(c.scope) if w == variable]
        if positions:
            current[k] = [row for row in current[k] if all(keep(row[i]) for i in positions)]


def _assemble(structure: MultiSortedStructure, source: CspInstance, constraints: Sequence[Constraint],
              current: Mapping[int, List[Row]], new_sorts: Mapping[str, str], witness: Tuple[str, str],
              moved: FrozenSet[str], ledger, limitations) -> ReductionResult:
    sort, a = witness
    first_sort, second_sort = split_sort_names(sort)
    elements = structure.elements(sort)
    sorts = []
    used = set(new_sorts.values())
    for s in structure.sorts:
        if s.name != sort:
            sorts.append(s)
            continue
        if sort in used:
            sorts.append(s)
        sorts.append(Sort(first_sort, tuple(e for e in elements if e != a)))
        sorts.append(Sort(second_sort, tuple(e for e in elements if e not in moved)))

    relations: Dict[Tuple[str, Tuple[str, ...], FrozenSet[Row]], str] = {}
    counts: Dict[str, int] = {}
    new_constraints = []
    for k, c in enumerate(constraints):
        sort_type = tuple(new_sorts[v] for v in c.scope)
        base = f"{c.relation}@{','.join(sort_type)}"
        key = (base, sort_type, frozenset(current[k]))
        if key not in relations:
            n = counts.get(base, 0)
            counts[base] = n + 1
            relations[key] = base if n == 0 else f"{base}#{n}"
        new_constraints.append(Constraint(relations[key], c.scope))

    relation_list = [Relation(name, sort_type, tuple(rows)) for (_, sort_type, rows), name in relations.items()]
    reduced = MultiSortedStructure.create(sorts, relation_list, False)
    variables = tuple((v, new_sorts[v]) for v, _ in source.variables)
    reduced_instance = CspInstance(variables, tuple(new_constraints))
    validate_instance(reduced_instance, reduced)
    logger.info(f"约化完成: {sum(1 for e in ledger if e['kind'] != 'keep')} 条记录, {len(limitations)} 个限制")
    return ReductionResult(reduced, reduced_instance, dict(new_sorts), ledger, limitations)
