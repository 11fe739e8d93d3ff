"""
非矩形障碍模块

从基结构（H 加上 Mal'tsev 杀手关系）的三元多态关系出发，逐个消去坐标，
得到一个可由 p-mpp 公式定义、且在两元素上非矩形的二元关系。
每一步都记录为公式和摘要，证书可以独立重放验证。
"""
import hashlib
import itertools
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

from joblib import Parallel, delayed, effective_n_jobs

from config.search_config import search_config
from config.settings import settings
from modcsp.autos import MAutomorphism, m_automorphisms
from modcsp.case_tables import TablePolynomial, polynomial_from_m_automorphism
from modcsp.exceptions import GuardExceeded, ModulusError, PreconditionError, StructureError
from modcsp.homcount import count_pointed, require_prime
from modcsp.mpp import (
    Atom, ClosureBudget, DefinedRelation, MaltsevVerdict, MppFormula, NoMaltsevCertified,
    NoMaltsevForHItself, closure_search, eval_mpp, formula_from_dict, is_p_conservative, maltsev_for_closure,
)
from modcsp.polyclone import enumerate_polymorphisms, indicator_coordinates
from modcsp.structures import MultiSortedStructure, Relation, Sort, constant_name, expand

logger = logging.getLogger(__name__)

Coord = Tuple[str, Tuple[str, str, str]]
Row = Tuple[str, ...]
BSets = Tuple[FrozenSet[str], FrozenSet[str], FrozenSet[str]]
Point = Tuple[str, Tuple[str, str, str]]
PREV = "prev"


def relation_digest(rows) -> str:
    payload = json.dumps(sorted(list(t) for t in rows), ensure_ascii=False)
    return hashlib.md5(payload.encode("utf-8")).hexdigest()


def formula_digest(formula: MppFormula) -> str:
    return hashlib.md5(formula.serialize().encode("utf-8")).hexdigest()


def coord_var(cid: int) -> str:
    return f"x{cid}"


@dataclass
class ObstructionState:
    """
    当前关系及其坐标

    左侧（I）坐标上跟踪 α/β，右侧（J）坐标上跟踪 γ/δ；
    关系在左右坐标上的投影含 (α,γ)、(β,γ)、(β,δ)，不含 (α,δ)。
    """
    coords: Dict[int, Coord]
    ids: List[int]
    rows: FrozenSet[Row]
    left: List[int]
    right: List[int]
    alpha: Dict[int, str]
    beta: Dict[int, str]
    gamma: Dict[int, str]
    delta: Dict[int, str]
    swapped: bool = False

    def sort_of(self, cid: int) -> str:
        return self.coords[cid][0]

    @property
    def sort_type(self) -> Tuple[str, ...]:
        return tuple(self.sort_of(i) for i in self.ids)

    def relation(self) -> Relation:
        return Relation(PREV, self.sort_type, tuple(sorted(self.rows)))

    def patterns(self) -> Tuple[Dict[int, str], Dict[int, str], Dict[int, str], Dict[int, str]]:
        """(α,γ)、(β,γ)、(β,δ) 以及缺失的 (α,δ)"""
        return ({**self.alpha, **self.gamma}, {**self.beta, **self.gamma},
                {**self.beta, **self.delta}, {**self.alpha, **self.delta})


@dataclass
class DerivationStep:
    rule: str
    removed: Tuple[int, ...]
    formula: MppFormula
    digest: str
    detail: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rule": self.rule, "removed": list(self.removed), "formula": self.formula.to_dict(),
                "digest": self.digest, "detail": self.detail}


@dataclass
class StuckReport:
    """
    构造卡住时的完整现场

    relation 是卡住时的关系（类别类型与元组），b_sets 是卡住坐标上的 B₁、B₂、B₃。
    """
    phase: str
    coordinate: Optional[Coord]
    tried: List[str]
    reason: str
    remaining: int
    steps: List[DerivationStep] = field(default_factory=list)
    relation: Optional[Dict[str, object]] = None
    b_sets: Optional[List[List[str]]] = None
    kind: str = "stuck"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "phase": self.phase,
                "coordinate": list(self.coordinate[:1]) + list(self.coordinate[1]) if self.coordinate else None,
                "tried": self.tried, "reason": self.reason, "remaining": self.remaining,
                "steps": len(self.steps), "relation": self.relation, "b_sets": self.b_sets}


def _stuck(phase: str, state: "ObstructionState", cid: int, tried: List[str], reason: str,
           deriver: "Deriver", b_sets: Optional[BSets] = None) -> StuckReport:
    relation = {"coordinates": [[state.sort_of(i), *state.coords[i][1]] for i in state.ids],
                "tuples": [list(t) for t in sorted(state.rows)]}
    ordered = None
    if b_sets is not None:
        elements = deriver.base.sort(state.sort_of(cid)).elements
        ordered = [[e for e in elements if e in b] for b in b_sets]
    return StuckReport(phase, state.coords[cid], tried, reason, len(state.ids), list(deriver.steps),
                       relation, ordered)


@dataclass
class ObstructionCertificate:
    modulus: int
    structure_digest: str
    route: str
    killers: List[Tuple[str, MppFormula, str]]
    definitions: List[Tuple[str, MppFormula, str]]
    initial_formula: MppFormula
    initial_formula_digest: str
    initial_digest: str
    coordinates: Dict[int, Coord]
    left: List[int]
    right: List[int]
    alpha: Dict[int, str]
    beta: Dict[int, str]
    gamma: Dict[int, str]
    delta: Dict[int, str]
    steps: List[DerivationStep]
    final_tuples: List[Row]
    swapped: bool
    terminal: List[List[int]]
    kind: str = "obstruction"

    def to_dict(self) -> dict:
        def named(items):
            return [{"name": n, "formula": f.to_dict(), "digest": d} for n, f, d in items]

        def values(d):
            return {str(k): v for k, v in d.items()}

        return {
            "kind": self.kind,
            "modulus": self.modulus,
            "structure_digest": self.structure_digest,
            "route": self.route,
            "killers": named(self.killers),
            "definitions": named(self.definitions),
            "initial_formula": self.initial_formula.to_dict(),
            "initial_formula_digest": self.initial_formula_digest,
            "initial_digest": self.initial_digest,
            "coordinates": {str(k): [s, list(t)] for k, (s, t) in self.coordinates.items()},
            "left": self.left,
            "right": self.right,
            "alpha": values(self.alpha),
            "beta": values(self.beta),
            "gamma": values(self.gamma),
            "delta": values(self.delta),
            "steps": [s.to_dict() for s in self.steps],
            "final_tuples": [list(t) for t in self.final_tuples],
            "swapped": self.swapped,
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ObstructionCertificate":
        def named(items):
            return [(i["name"], formula_from_dict(i["formula"]), i["digest"]) for i in items]

        def values(d):
            return {int(k): str(v) for k, v in d.items()}

        try:
            return cls(
                modulus=int(payload["modulus"]),
                structure_digest=payload["structure_digest"],
                route=payload.get("route", "generic"),
                killers=named(payload.get("killers", [])),
                definitions=named(payload.get("definitions", [])),
                initial_formula=formula_from_dict(payload["initial_formula"]),
                initial_formula_digest=payload["initial_formula_digest"],
                initial_digest=payload["initial_digest"],
                coordinates={int(k): (v[0], tuple(v[1])) for k, v in payload["coordinates"].items()},
                left=[int(i) for i in payload["left"]],
                right=[int(i) for i in payload["right"]],
                alpha=values(payload["alpha"]),
                beta=values(payload["beta"]),
                gamma=values(payload["gamma"]),
                delta=values(payload["delta"]),
                steps=[DerivationStep(s["rule"], tuple(s["removed"]), formula_from_dict(s["formula"]),
                                      s["digest"], dict(s.get("detail", {}))) for s in payload["steps"]],
                final_tuples=[tuple(t) for t in payload["final_tuples"]],
                swapped=bool(payload.get("swapped", False)),
                terminal=[list(r) for r in payload["terminal"]],
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise StructureError(f"证书格式错误: {exc}", "certificate") from None


@dataclass
class AutomorphicPolynomialFound:
    polynomial: TablePolynomial
    m_automorphism: MAutomorphism
    kind: str = "automorphic-polynomial"


ObstructionResult = Union[ObstructionCertificate, StuckReport, AutomorphicPolynomialFound]


def _quantify(rows, k: int, p: int) -> FrozenSet[Row]:
    counts = Counter(t[:k] + t[k + 1:] for t in rows)
    return frozenset(t for t, c in counts.items() if c % p)


def _projection(rows, positions: Sequence[int]) -> set:
    return {tuple(t[i] for i in positions) for t in rows}


def _hits(state: ObstructionState, ids: Sequence[int], rows, check_missing: bool = True) -> bool:
    """新关系在剩余左右坐标上是否仍含三个模式且不含缺失模式"""
    tracked = [i for i in state.left + state.right if i in ids]
    positions = [ids.index(i) for i in tracked]
    projection = _projection(rows, positions)
    present = state.patterns()
    for pattern in present[:3]:
        if tuple(pattern[i] for i in tracked) not in projection:
            return False
    if check_missing and tuple(present[3][i] for i in tracked) in projection:
        return False
    return True


@dataclass
class _Move:
    rule: str
    removed: Tuple[int, ...]
    rows: FrozenSet[Row]
    atoms: List[Atom]
    detail: Dict[str, object]
    extra: Tuple[Tuple[str, str], ...] = ()


def _pin_move(state: ObstructionState, base: MultiSortedStructure, cid: int, value: str) -> Optional[_Move]:
    name = constant_name(state.sort_of(cid), value)
    if not base.has_relation(name):
        return None
    k = state.ids.index(cid)
    rows = frozenset(t[:k] + t[k + 1:] for t in state.rows if t[k] == value)
    return _Move("pin", (cid,), rows, [Atom(name, (coord_var(cid),))], {"value": value})


def _plain_move(state: ObstructionState, cid: int, p: int) -> _Move:
    return _Move("quantify", (cid,), _quantify(state.rows, state.ids.index(cid), p), [], {})


def _subset_move(state: ObstructionState, cid: int, subset: FrozenSet[str], name: str, p: int) -> _Move:
    k = state.ids.index(cid)
    restricted = [t for t in state.rows if t[k] in subset]
    return _Move("subalgebra", (cid,), _quantify(restricted, k, p),
                 [Atom(name, (coord_var(cid),))], {"subset": sorted(subset)})


def extension_sets(state: ObstructionState, cid: int) -> BSets:
    """
    B₁、B₂、B₃：(α,γ)、(β,γ)、(β,δ) 在其余被跟踪坐标上的扩展在 cid 处取到的值
    """
    k = state.ids.index(cid)
    tracked = [i for i in state.left + state.right if i != cid]
    positions = [state.ids.index(i) for i in tracked]
    keys = [tuple(pattern[i] for i in tracked) for pattern in state.patterns()[:3]]
    found = ([], [], [])
    for t in state.rows:
        view = tuple(t[i] for i in positions)
        for n, key in enumerate(keys):
            if view == key:
                found[n].append(t[k])
    return tuple(frozenset(values) for values in found)


def _ordered(base: MultiSortedStructure, sort: str, values) -> List[str]:
    return [e for e in base.sort(sort).elements if e in values]


GadgetCandidate = Tuple[Tuple[str, ...], Tuple[Tuple[int, int], ...], Tuple[Tuple[str, Tuple[int, ...]], ...]]


def _vertex(n: int) -> str:
    return f"v{n}"


def _gadget_structure(h: MultiSortedStructure, candidate: GadgetCandidate) -> MultiSortedStructure:
    sorts, _, atoms = candidate
    return MultiSortedStructure(
        tuple(Sort(s.name, tuple(_vertex(n) for n, srt in enumerate(sorts) if srt == s.name)) for s in h.sorts),
        tuple(Relation(r.name, r.sort_type, tuple(tuple(_vertex(v) for v in scope)
                                                  for name, scope in atoms if name == r.name))
              for r in h.relations),
    )


def _pointed_counts(h: MultiSortedStructure, p: int, candidate: GadgetCandidate,
                    points: Sequence[Point], targets: BSets) -> Tuple[int, ...]:
    sorts, pins, _ = candidate
    g = _gadget_structure(h, candidate)
    anchors = [(sorts[v], _vertex(v)) for v, _ in pins] + [(sorts[0], _vertex(0))]
    counts = []
    for n, target in enumerate(targets):
        images = [points[j][1][n] for _, j in pins] + [target]
        counts.append(count_pointed(g, anchors, h, images) % p)
    return tuple(counts)


@dataclass
class GadgetWitness:
    """
    带定点的小结构 (G, x₁…x_s, x)

    顶点 0 是 x，pins 把其余顶点对应到定点的序号；
    counts 是三组定点像下的带定点同态计数模 p，都不为 0。
    """
    sorts: Tuple[str, ...]
    pins: Tuple[Tuple[int, int], ...]
    atoms: Tuple[Tuple[str, Tuple[int, ...]], ...]
    counts: Tuple[int, ...]

    @property
    def candidate(self) -> GadgetCandidate:
        return self.sorts, self.pins, self.atoms

    def structure(self, h: MultiSortedStructure) -> MultiSortedStructure:
        return _gadget_structure(h, self.candidate)

    def verify(self, h: MultiSortedStructure, p: int, points: Sequence[Point], targets: BSets) -> bool:
        """用 count_pointed 重新计数"""
        counts = _pointed_counts(h, p, self.candidate, points, targets)
        return counts == tuple(self.counts) and all(counts)

    def to_dict(self) -> dict:
        return {"sorts": list(self.sorts), "pins": [list(pin) for pin in self.pins],
                "atoms": [[name, list(scope)] for name, scope in self.atoms], "counts": list(self.counts)}


def _layouts(h: MultiSortedStructure, x_sort: str, points: Sequence[Point], size: int):
    for k in range(min(size - 1, len(points)), -1, -1):
        for chosen in itertools.combinations(range(len(points)), k):
            for aux in itertools.combinations_with_replacement(h.sort_names, size - 1 - k):
                sorts = (x_sort,) + tuple(points[j][0] for j in chosen) + tuple(aux)
                yield sorts, tuple((1 + n, j) for n, j in enumerate(chosen))


def gadget_candidates(h: MultiSortedStructure, x_sort: str, points: Sequence[Point],
                      max_vertices: int, max_atoms: int):
    """
    按规范顺序枚举候选：顶点数递增，同样顶点数时定点多的布局在前，再按原子个数和字典序

    除 x 以外的每个顶点都必须出现在某个原子里。
    """
    for size in range(1, max_vertices + 1):
        for sorts, pins in _layouts(h, x_sort, points, size):
            scopes = [(r.name, scope) for r in h.relations
                      for scope in itertools.product(range(size), repeat=r.arity)
                      if all(sorts[v] == s for v, s in zip(scope, r.sort_type))]
            needed = set(range(1, size))
            for count in range(max_atoms + 1):
                for atoms in itertools.combinations(scopes, count):
                    if needed <= {v for _, scope in atoms for v in scope}:
                        yield sorts, pins, atoms


def _check_gadget_chunk(h: MultiSortedStructure, p: int, chunk: Sequence[GadgetCandidate],
                        points: Sequence[Point], targets: BSets) -> Optional[Tuple[int, Tuple[int, ...]]]:
    for offset, candidate in enumerate(chunk):
        counts = _pointed_counts(h, p, candidate, points, targets)
        if all(counts):
            return offset, counts
    return None


def find_gadget(h: MultiSortedStructure, p: int, points: Sequence[Point], x_sort: str, targets: BSets,
                gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None) -> Optional[GadgetWitness]:
    """
    在预算内寻找小工具 (G, x₁…x_s, x)

    三个条件：定点依次取 points 的第 n 个分量、x 取 targets[n] 时，带定点同态计数模 p 不为 0。
    候选分块并行检查，按块顺序取第一个命中，得到规范顺序下最小的见证。

    Args:
        points: 定点 (类别, 三个模式下的值)
        targets: B₁、B₂、B₃
    """
    p = require_prime(p)
    budget = search_config.merged_budget('gadget', gadget_budget)
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    candidates = list(itertools.islice(
        gadget_candidates(h, x_sort, points, budget['max_vertices'], budget['max_atoms']),
        budget['max_candidates']))
    size = max(1, budget['chunk_size'])
    chunks = [candidates[i:i + size] for i in range(0, len(candidates), size)]
    wave = max(1, effective_n_jobs(n_jobs))
    for start in range(0, len(chunks), wave):
        batch = chunks[start:start + wave]
        found = Parallel(n_jobs=n_jobs)(delayed(_check_gadget_chunk)(h, p, chunk, points, targets)
                                        for chunk in batch)
        for chunk, hit in zip(batch, found):
            if hit is not None:
                offset, counts = hit
                sorts, pins, atoms = chunk[offset]
                witness = GadgetWitness(sorts, pins, atoms, counts)
                logger.info(f"找到小工具: {len(sorts)} 个顶点, {len(atoms)} 个原子")
                return witness
    logger.info(f"小工具搜索在预算内没有结果 ({len(candidates)} 个候选)")
    return None


def _gadget_move(state: ObstructionState, cid: int, witness: GadgetWitness, tracked: Sequence[int],
                 base: MultiSortedStructure, p: int) -> _Move:
    """∃^{≡p} (z, 辅助顶点) (prev ∧ G)，G 的定点接到被跟踪的坐标上"""
    names = {0: coord_var(cid)}
    names.update({v: coord_var(tracked[j]) for v, j in witness.pins})
    aux = [v for v in range(1, len(witness.sorts)) if v not in names]
    names.update({v: f"g{v}" for v in aux})
    g = witness.structure(base)
    anchors = [(witness.sorts[v], _vertex(v)) for v, _ in witness.pins] + [(witness.sorts[0], _vertex(0))]
    k = state.ids.index(cid)
    positions = [state.ids.index(tracked[j]) for _, j in witness.pins]
    weights: Dict[Row, int] = {}
    counts: Counter = Counter()
    for t in state.rows:
        key = tuple(t[i] for i in positions) + (t[k],)
        if key not in weights:
            weights[key] = count_pointed(g, anchors, base, list(key)) % p
        counts[t[:k] + t[k + 1:]] += weights[key]
    rows = frozenset(t for t, c in counts.items() if c % p)
    atoms = [Atom(name, tuple(names[v] for v in scope)) for name, scope in witness.atoms]
    return _Move("gadget", (cid,), rows, atoms, {"witness": witness.to_dict()},
                 tuple((names[v], witness.sorts[v]) for v in aux))


class Deriver:
    """按步构造推导，每一步都用公式求值核对；闭包在第一次需要时才计算"""

    def __init__(self, base: MultiSortedStructure, p: int, budget: ClosureBudget,
                 gadget_budget: Optional[dict], n_jobs: Optional[int]):
        self.base = base
        self.p = p
        self.budget = replace(budget, max_free_arity=min(budget.max_free_arity, 2))
        self.gadget_budget = gadget_budget
        self.n_jobs = n_jobs
        self.steps: List[DerivationStep] = []
        self.env: Dict[str, Relation] = {}
        self.definitions: Dict[str, DefinedRelation] = {}
        self._subsets: Optional[Dict[str, List[Tuple[FrozenSet[str], str]]]] = None
        self._binaries: List[Tuple[str, DefinedRelation]] = []
        self.used: List[str] = []

    def _load(self) -> None:
        if self._subsets is not None:
            return
        self._subsets = {}
        closure = closure_search(self.base, self.p, self.budget)
        for n, defined in enumerate(closure.relations):
            name = f"#d{n}"
            rel = defined.relation
            if rel.arity == 1:
                subset = frozenset(t[0] for t in rel.tuples)
                self._subsets.setdefault(rel.sort_type[0], []).append((subset, name))
            elif rel.arity == 2:
                self._binaries.append((name, defined))
            self.definitions[name] = defined

    @property
    def subsets(self) -> Dict[str, List[Tuple[FrozenSet[str], str]]]:
        self._load()
        return self._subsets

    @property
    def binaries(self) -> List[Tuple[str, DefinedRelation]]:
        self._load()
        return self._binaries

    def _use(self, name: str) -> None:
        if name in self.definitions and name not in self.env:
            self.env[name] = self.definitions[name].relation.renamed(name)
            self.used.append(name)

    def apply(self, state: ObstructionState, move: _Move) -> None:
        for atom in move.atoms:
            self._use(atom.relation)
        free = [(coord_var(i), state.sort_of(i)) for i in state.ids if i not in move.removed]
        block = tuple((coord_var(i), state.sort_of(i)) for i in move.removed) + tuple(move.extra)
        atoms = [Atom(PREV, tuple(coord_var(i) for i in state.ids))] + list(move.atoms)
        formula = MppFormula(tuple(free), (block,) if block else (), tuple(atoms))
        env = dict(self.env)
        env[PREV] = state.relation()
        relation = eval_mpp(formula, self.base, self.p, env, PREV)
        if relation.tuple_set != move.rows:
            raise RuntimeError(f"步骤 {move.rule} 的公式求值与直接计算不一致")
        state.ids = [i for i in state.ids if i not in move.removed]
        state.rows = move.rows
        for cid in move.removed:
            for table in (state.alpha, state.beta, state.gamma, state.delta):
                table.pop(cid, None)
        state.left = [i for i in state.left if i not in move.removed]
        state.right = [i for i in state.right if i not in move.removed]
        self.steps.append(DerivationStep(move.rule, move.removed, formula, relation_digest(move.rows),
                                         dict(move.detail)))
        logger.debug(f"步骤 {move.rule}: 剩余 {len(state.ids)} 个坐标, {len(state.rows)} 个元组")

    def subset_candidates(self, sort: str, size: int) -> List[Tuple[FrozenSet[str], str]]:
        return [(s, n) for s, n in self.subsets.get(sort, []) if 1 < len(s) < size]

    def attempt(self, state: ObstructionState, cid: int, move: Optional[_Move]) -> bool:
        """模式保持时执行该步"""
        if move is None or not _hits(state, [i for i in state.ids if i != cid], move.rows):
            return False
        self.apply(state, move)
        return True


def eliminate_coordinate(state: ObstructionState, cid: int, deriver: Deriver) -> Optional[StuckReport]:
    """
    消去一个 E 坐标

    先算 B₁、B₂、B₃，再按顺序尝试：
    (i) 公共元素 c：固定 z=c 后量化；
    (ii) B₁≠B₂ 且 B₁∩B₂ 非空：把 J 坐标固定为 γ，z 成为唯一的右侧坐标；
    (iii) 直接 ∃^{≡p}，B 两两不交时先限制到每个 B 恰含一个元素的可定义子集；
    (iv) 与每个 B 都相交的可定义子集；
    (v) 小工具。

    Returns:
        成功时 None，失败时返回卡住报告
    """
    tried = []
    sort = state.sort_of(cid)
    size = deriver.base.sort(sort).size
    b_sets = extension_sets(state, cid)
    b1, b2, b3 = b_sets

    common = b1 & b2 & b3
    if common:
        tried.append("pin")
        for value in _ordered(deriver.base, sort, common):
            if deriver.attempt(state, cid, _pin_move(state, deriver.base, cid, value)):
                return None

    if b1 != b2 and b1 & b2:
        tried.append("swap")
        if _swap(state, deriver, "right", cid, state.gamma):
            return None

    tried.append("quantify")
    if not (b1 & b2 or b1 & b3 or b2 & b3):
        for subset, name in deriver.subset_candidates(sort, size):
            if all(len(subset & b) == 1 for b in b_sets) and \
                    deriver.attempt(state, cid, _subset_move(state, cid, subset, name, deriver.p)):
                return None
    if deriver.attempt(state, cid, _plain_move(state, cid, deriver.p)):
        return None

    tried.append("subalgebra")
    for subset, name in deriver.subset_candidates(sort, size):
        if all(subset & b for b in b_sets) and \
                deriver.attempt(state, cid, _subset_move(state, cid, subset, name, deriver.p)):
            return None

    tried.append("gadget")
    tracked = list(state.left) + list(state.right)
    patterns = state.patterns()[:3]
    points = [(state.sort_of(i), tuple(pattern[i] for pattern in patterns)) for i in tracked]
    witness = find_gadget(deriver.base, deriver.p, points, sort, b_sets, deriver.gadget_budget, deriver.n_jobs)
    if witness is not None and \
            deriver.attempt(state, cid, _gadget_move(state, cid, witness, tracked, deriver.base, deriver.p)):
        return None
    logger.warning(f"坐标 {state.coords[cid]} 无法消去")
    return _stuck("eliminate", state, cid, tried, "没有可行的消去方式", deriver, b_sets)


def _find_pattern(rows, left_positions: Sequence[int], x: int, left_order: Sequence[Tuple[str, ...]],
                  values: Sequence[str]) -> Optional[Tuple[Tuple[str, ...], Tuple[str, ...], str, str]]:
    """在 (左侧投影, x) 上找 (l1,u),(l2,u),(l2,w) ∈ 而 (l1,w) ∉ 的模式"""
    pairs = {(tuple(t[i] for i in left_positions), t[x]) for t in rows}
    for l1 in left_order:
        for l2 in left_order:
            if l1 == l2:
                continue
            for u in values:
                if (l1, u) not in pairs or (l2, u) not in pairs:
                    continue
                for w in values:
                    if w != u and (l2, w) in pairs and (l1, w) not in pairs:
                        return l1, l2, u, w
    return None


def _reduce_step(state: ObstructionState, deriver: Deriver, side: str) -> bool:
    """
    在一侧消去一个坐标

    对每个坐标依次尝试：p ≥ 3 时直接量化；公共元素固定；交换障碍（同侧其他坐标固定为两种锚值）；
    直接量化；可定义子集。
    """
    members = list(state.right if side == "right" else state.left)
    anchors = (state.gamma, state.delta) if side == "right" else (state.beta, state.alpha)
    p = deriver.p
    for cid in members:
        sort = state.sort_of(cid)
        if p >= 3 and deriver.attempt(state, cid, _plain_move(state, cid, p)):
            return True
        b1, b2, b3 = extension_sets(state, cid)
        for value in _ordered(deriver.base, sort, b1 & b2 & b3):
            if deriver.attempt(state, cid, _pin_move(state, deriver.base, cid, value)):
                return True
        for anchor in anchors:
            if _swap(state, deriver, side, cid, anchor):
                return True
        if deriver.attempt(state, cid, _plain_move(state, cid, p)):
            return True
        size = deriver.base.sort(sort).size
        for subset, name in deriver.subset_candidates(sort, size):
            if deriver.attempt(state, cid, _subset_move(state, cid, subset, name, p)):
                return True
    return False


def two_element_reduce(state: ObstructionState, deriver: Deriver) -> Optional[StuckReport]:
    """把两侧的坐标各压到一个；两侧都只剩一个坐标时原样返回"""
    while len(state.right) > 1 or len(state.left) > 1:
        progressed = False
        for side in ("right", "left"):
            members = state.right if side == "right" else state.left
            if len(members) > 1 and _reduce_step(state, deriver, side):
                progressed = True
                break
        if not progressed:
            side = "right" if len(state.right) > 1 else "left"
            cid = (state.right if side == "right" else state.left)[0]
            return _stuck("two-element", state, cid, ["quantify", "pin", "swap", "subalgebra"],
                          f"{side} 侧坐标无法合并", deriver, extension_sets(state, cid))
    return None


def _swap(state: ObstructionState, deriver: Deriver, side: str, keep: int, anchor: Dict[int, str]) -> bool:
    """
    把同侧其他坐标固定为 anchor 中的值，只保留 keep，在 (对侧, keep) 的二部关系中重新寻找非矩形模式

    keep 可以是尚未消去的 E 坐标，此时它成为该侧唯一的坐标。
    """
    members = state.right if side == "right" else state.left
    others = [i for i in members if i != keep]
    if not others and keep in members:
        return False
    atoms = []
    for cid in others:
        name = constant_name(state.sort_of(cid), anchor[cid])
        if not deriver.base.has_relation(name):
            return False
        atoms.append(Atom(name, (coord_var(cid),)))
    positions = [state.ids.index(i) for i in others]
    rows = {tuple(v for k, v in enumerate(t) if k not in positions)
            for t in state.rows if all(t[state.ids.index(i)] == anchor[i] for i in others)}
    ids_after = [i for i in state.ids if i not in others]

    opposite = state.left if side == "right" else state.right
    x = ids_after.index(keep)
    opposite_positions = [ids_after.index(i) for i in opposite]
    order = sorted(_projection(rows, opposite_positions))
    if side == "right":
        current = (tuple(state.alpha[i] for i in opposite), tuple(state.beta[i] for i in opposite))
    else:
        current = (tuple(state.delta[i] for i in opposite), tuple(state.gamma[i] for i in opposite))
    order = [c for c in current if c in order] + [c for c in order if c not in current]
    values = deriver.base.sort(state.sort_of(keep)).elements
    found = _find_pattern(rows, opposite_positions, x, order, values)
    if found is None:
        return False
    l1, l2, u, w = found
    anchor_name = next(n for n in ("alpha", "beta", "gamma", "delta") if getattr(state, n) is anchor)
    move = _Move("swap", tuple(others), frozenset(rows), atoms, {"side": side, "kept": keep, "anchor": anchor_name})
    deriver.apply(state, move)
    state.swapped = state.swapped or (l1, l2) != current
    if side == "right":
        # 左侧 l1/l2 对应 α/β，右侧 u/w 对应 γ/δ
        if keep not in state.right:
            state.right.append(keep)
        state.alpha.update(zip(opposite, l1))
        state.beta.update(zip(opposite, l2))
        state.gamma[keep], state.delta[keep] = u, w
    else:
        # 右侧 l1/l2 对应 δ/γ，左侧 u/w 对应 β/α
        if keep not in state.left:
            state.left.append(keep)
        state.delta.update(zip(opposite, l1))
        state.gamma.update(zip(opposite, l2))
        state.beta[keep], state.alpha[keep] = u, w
    return True


def _terminal(state: ObstructionState) -> List[List[int]]:
    """行 [α, β]，列 [δ, γ]"""
    (x,), (y,) = state.left, state.right
    i, j = state.ids.index(x), state.ids.index(y)
    pairs = {(t[i], t[j]) for t in state.rows}
    return [[int((state.alpha[x], state.delta[y]) in pairs), int((state.alpha[x], state.gamma[y]) in pairs)],
            [int((state.beta[x], state.delta[y]) in pairs), int((state.beta[x], state.gamma[y]) in pairs)]]


def _direct_route(base: MultiSortedStructure, deriver: Deriver) -> Optional[Tuple[ObstructionState, MppFormula]]:
    """
    在闭包的二元关系中直接寻找非矩形的 2×2 子网格

    两侧的二元子集必须可定义（或就是整个类别），然后限制到该子网格上。
    """
    for name, defined in deriver.binaries:
        relation = defined.relation
        s1, s2 = relation.sort_type
        rows = relation.tuple_set
        for a, b in itertools.permutations(base.sort(s1).elements, 2):
            for c, d in itertools.permutations(base.sort(s2).elements, 2):
                if (a, c) not in rows or (b, c) not in rows or (b, d) not in rows or (a, d) in rows:
                    continue
                first = _restriction(deriver, s1, frozenset((a, b)))
                second = _restriction(deriver, s2, frozenset((c, d)))
                if first is False or second is False:
                    continue
                coords = {0: (s1, ()), 1: (s2, ())}
                state = ObstructionState(coords, [0, 1], rows, [0], [1], {0: a}, {0: b}, {1: c}, {1: d})
                for cid, restriction in ((0, first), (1, second)):
                    if restriction is None:
                        continue
                    values, subset_name = restriction
                    k = state.ids.index(cid)
                    restricted = frozenset(t for t in state.rows if t[k] in values)
                    deriver.apply(state, _Move("restrict", (), restricted, [Atom(subset_name, (coord_var(cid),))],
                                               {"subset": sorted(values)}))
                logger.info(f"闭包关系 {name} 直接给出非矩形模式")
                return state, defined.formula
    return None


def _restriction(deriver: Deriver, sort: str, values: FrozenSet[str]):
    """整个类别时返回 None，可定义时返回 (子集, 名称)，否则 False"""
    if len(deriver.base.sort(sort).elements) == len(values):
        return None
    name = next((n for s, n in deriver.subsets.get(sort, []) if s == values), None)
    return (values, name) if name is not None else False


def _certificate(p: int, structure_digest: str, route: str, killers, deriver: Deriver, formula: MppFormula,
                 initial_digest: str, coords: Dict[int, Coord], left: List[int], right: List[int],
                 state: ObstructionState) -> ObstructionCertificate:
    terminal = _terminal(state)
    if terminal != [[0, 1], [1, 1]]:
        raise RuntimeError(f"终端矩阵不是非矩形模式: {terminal}")
    killer_items = [(name, d.formula, relation_digest(d.relation.tuples)) for name, d in killers]
    definitions = [(name, deriver.definitions[name].formula,
                    relation_digest(deriver.definitions[name].relation.tuples)) for name in deriver.used]
    x, y = state.left[0], state.right[0]
    certificate = ObstructionCertificate(
        modulus=p, structure_digest=structure_digest, route=route,
        killers=killer_items, definitions=definitions,
        initial_formula=formula, initial_formula_digest=formula_digest(formula), initial_digest=initial_digest,
        coordinates=coords, left=left, right=right,
        alpha={x: state.alpha[x]}, beta={x: state.beta[x]}, gamma={y: state.gamma[y]}, delta={y: state.delta[y]},
        steps=list(deriver.steps), final_tuples=sorted(state.rows), swapped=state.swapped, terminal=terminal,
    )
    logger.info(f"障碍构造完成: {len(deriver.steps)} 步, 路线 {route}")
    return certificate


def initial_formula(base: MultiSortedStructure, coords: Dict[int, Coord]) -> MppFormula:
    """三元多态关系的无量词定义：每个关系、每组三个元组给出一个原子"""
    index = {coord: cid for cid, coord in coords.items()}
    atoms = []
    for r in base.relations:
        for rows in itertools.product(r.tuples, repeat=3):
            scope = tuple(coord_var(index[(r.sort_type[k], tuple(row[k] for row in rows))]) for k in range(r.arity))
            atoms.append(Atom(r.name, scope))
    free = tuple((coord_var(cid), coords[cid][0]) for cid in sorted(coords))
    return MppFormula(free, (), tuple(atoms))


def build_obstruction(base: MultiSortedStructure, p: int, structure_digest: str,
                      killers: Sequence[Tuple[str, DefinedRelation]] = (), route: str = "generic",
                      budget: Optional[ClosureBudget] = None, gadget_budget: Optional[dict] = None,
                      n_jobs: Optional[int] = None, direct: bool = True,
                      eliminate: bool = True) -> Union[ObstructionCertificate, StuckReport]:
    """
    在没有 Mal'tsev 多态的基结构上构造非矩形障碍

    先在闭包的二元关系中直接寻找非矩形模式（direct=False 时跳过），
    找不到再从三元多态关系出发逐个消去坐标（eliminate=False 时直接报告卡住）。

    Raises:
        PreconditionError: 基结构有 Mal'tsev 多态
    """
    p = require_prime(p)
    deriver = Deriver(base, p, budget or ClosureBudget.from_config(), gadget_budget, n_jobs)
    if direct:
        found = _direct_route(base, deriver)
        if found is not None:
            state, start = found
            return _certificate(p, structure_digest, f"{route}+direct", killers, deriver, start,
                                relation_digest(eval_mpp(start, base, p, name=PREV).tuples),
                                state.coords, [0], [1], state)
    if not eliminate:
        return StuckReport("direct", None, ["direct"], "闭包中没有非矩形的二元关系", 0)

    coordinates = indicator_coordinates(base)
    coords = {cid: coord for cid, coord in enumerate(coordinates.all)}
    index = {coord: cid for cid, coord in coords.items()}
    left = [index[c] for c in coordinates.I]
    right = [index[c] for c in coordinates.J]
    ids = sorted(coords)

    polymorphisms = enumerate_polymorphisms(base, 3)
    rows = frozenset(tuple(f(coords[cid][0], *coords[cid][1]) for cid in ids) for f in polymorphisms)
    state = ObstructionState(
        coords, ids, rows, list(left), list(right),
        {cid: a for cid, a in zip(left, coordinates.a)}, {cid: b for cid, b in zip(left, coordinates.b)},
        {cid: c for cid, c in zip(right, coordinates.c)}, {cid: d for cid, d in zip(right, coordinates.d)},
    )
    if not _hits(state, state.ids, state.rows):
        raise PreconditionError("基结构有 Mal'tsev 多态，不存在障碍")
    formula = initial_formula(base, coords)
    initial_digest = relation_digest(rows)
    logger.info(f"开始构造障碍: {len(ids)} 个坐标, {len(rows)} 个三元多态")

    for cid in [index[c] for c in coordinates.E]:
        stuck = eliminate_coordinate(state, cid, deriver)
        if stuck is not None:
            return stuck

    for cid in list(state.left) + list(state.right):
        same = state.alpha[cid] == state.beta[cid] if cid in state.alpha else state.gamma[cid] == state.delta[cid]
        if not same:
            continue
        value = state.alpha[cid] if cid in state.alpha else state.gamma[cid]
        if not deriver.attempt(state, cid, _pin_move(state, base, cid, value)) and \
                not deriver.attempt(state, cid, _plain_move(state, cid, p)):
            return _stuck("singleton", state, cid, ["pin", "quantify"], "单值坐标无法消去", deriver)

    for cid in list(state.ids):
        values = {state.alpha[cid], state.beta[cid]} if cid in state.alpha else {state.gamma[cid], state.delta[cid]}
        name = next((n for s, n in deriver.subsets.get(state.sort_of(cid), []) if s == values), None)
        if name is None:
            continue
        k = state.ids.index(cid)
        restricted = frozenset(t for t in state.rows if t[k] in values)
        if restricted != state.rows:
            deriver.apply(state, _Move("restrict", (), restricted, [Atom(name, (coord_var(cid),))],
                                       {"subset": sorted(values)}))

    stuck = two_element_reduce(state, deriver)
    if stuck is not None:
        return stuck

    return _certificate(p, structure_digest, route, killers, deriver, formula, initial_digest, coords, left, right,
                        state)


def base_from_verdict(structure: MultiSortedStructure,
                      verdict: MaltsevVerdict) -> Tuple[MultiSortedStructure, List[Tuple[str, DefinedRelation]]]:
    """障碍构造的基结构：H 加上 Mal'tsev 杀手关系"""
    if isinstance(verdict, NoMaltsevForHItself):
        return structure, []
    if isinstance(verdict, NoMaltsevCertified):
        killers = []
        seen = set()
        for record in verdict.killers:
            if record.name not in seen:
                seen.add(record.name)
                killers.append((record.name, record.killer))
        return verdict.expanded(structure), killers
    raise PreconditionError("闭包在预算内仍有 Mal'tsev 多态")


def conservative_obstruction(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                             gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None,
                             verdict: Optional[MaltsevVerdict] = None) -> Union[ObstructionCertificate, StuckReport]:
    """p-保守且闭包无 Mal'tsev 多态时的障碍构造"""
    p = require_prime(p)
    conservativity = is_p_conservative(structure, p, budget)
    if conservativity.status != "certified-yes":
        raise PreconditionError("结构未被证明是 p-保守的")
    verdict = verdict or maltsev_for_closure(structure, p, budget)
    base, killers = base_from_verdict(structure, verdict)
    return build_obstruction(base, p, structure.digest(), killers, "conservative", budget, gadget_budget, n_jobs)


def three_element_obstruction(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                              gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None,
                              verdict: Optional[MaltsevVerdict] = None) -> ObstructionResult:
    """
    三元素（单类别）结构

    1. 用 p 阶 M-自同构和案例表寻找自同构多项式，找到时优先返回
    2. 闭包里直接有非矩形二元关系时返回该证书
    3. 依次走保守路线或一般路线的坐标消去
    """
    p = require_prime(p)
    if len(structure.sorts) != 1 or structure.sorts[0].size > 3:
        raise PreconditionError("只适用于至多三个元素的单类别结构")
    verdict = verdict or maltsev_for_closure(structure, p, budget)
    base, killers = base_from_verdict(structure, verdict)

    try:
        for g in m_automorphisms(base, p):
            if g.order != p:
                continue
            polynomial = polynomial_from_m_automorphism(structure, g, p)
            if polynomial is not None:
                logger.info(f"由 M-自同构得到自同构多项式 (表 {polynomial.table} 第 {polynomial.row} 行)")
                return AutomorphicPolynomialFound(polynomial, g)
    except GuardExceeded as exc:
        logger.warning(f"跳过 M-自同构搜索: {exc}")

    conservative = is_p_conservative(structure, p, budget).status == "certified-yes"
    route = "conservative" if conservative else "generic"
    return build_obstruction(base, p, structure.digest(), killers, route, budget, gadget_budget, n_jobs)


@dataclass
class CertificateCheck:
    ok: bool
    divergence: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def verify_certificate(certificate: ObstructionCertificate, structure: MultiSortedStructure,
                       p: int) -> CertificateCheck:
    """独立重放证书：重建基结构、定义、初始关系和每一步，最后检查非矩形模式；证书必须是模 p 的"""
    try:
        p = require_prime(p)
    except ModulusError as exc:
        return CertificateCheck(False, str(exc))
    if certificate.modulus != p:
        return CertificateCheck(False, f"证书模数 {certificate.modulus} 与 p={p} 不一致")
    if structure.digest() != certificate.structure_digest:
        return CertificateCheck(False, "结构摘要不一致")

    try:
        extra = []
        for name, formula, digest in certificate.killers:
            relation = eval_mpp(formula, structure, p, name=name)
            if relation_digest(relation.tuples) != digest:
                return CertificateCheck(False, f"杀手关系 {name} 不一致")
            extra.append(relation)
        base = expand(structure, extra) if extra else structure

        env: Dict[str, Relation] = {}
        for name, formula, digest in certificate.definitions:
            relation = eval_mpp(formula, base, p, name=name)
            if relation_digest(relation.tuples) != digest:
                return CertificateCheck(False, f"定义 {name} 不一致")
            env[name] = relation

        if formula_digest(certificate.initial_formula) != certificate.initial_formula_digest:
            return CertificateCheck(False, "初始公式摘要不一致")
        direct = certificate.route.endswith("+direct")
        expected = None if direct else initial_formula(base, certificate.coordinates)
        if expected is not None and expected.serialize() != certificate.initial_formula.serialize():
            return CertificateCheck(False, "初始公式不是基结构的三元多态关系")
        current = eval_mpp(certificate.initial_formula, base, p, name=PREV)
        if relation_digest(current.tuples) != certificate.initial_digest:
            return CertificateCheck(False, "初始关系不一致")

        for number, step in enumerate(certificate.steps):
            step_env = dict(env)
            step_env[PREV] = current
            current = eval_mpp(step.formula, base, p, step_env, PREV)
            if relation_digest(current.tuples) != step.digest:
                return CertificateCheck(False, f"第 {number} 步 ({step.rule}) 结果不一致")
    except (StructureError, ModulusError) as exc:
        return CertificateCheck(False, f"重放失败: {exc}")

    if current.tuple_set != frozenset(certificate.final_tuples):
        return CertificateCheck(False, "最终关系与记录不符")
    if current.arity != 2:
        return CertificateCheck(False, "最终关系不是二元的")
    (x, a), = certificate.alpha.items()
    (_, b), = certificate.beta.items()
    (y, c), = certificate.gamma.items()
    (_, d), = certificate.delta.items()
    matrix = [[int((a, d) in current), int((a, c) in current)],
              [int((b, d) in current), int((b, c) in current)]]
    if matrix != [[0, 1], [1, 1]] or matrix != certificate.terminal:
        return CertificateCheck(False, f"终端矩阵 {matrix} 不是非矩形模式")
    return CertificateCheck(True)
