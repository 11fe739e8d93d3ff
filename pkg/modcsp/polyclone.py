"""
多态与克隆模块

运算表、项的解析与求值、指示实例与多态枚举、Mal'tsev 判定、
矩形性检查、p-自同构多项式搜索，以及由 Mal'tsev 运算构造 minority 运算。
"""
import itertools
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from sympy.combinatorics.permutations import Permutation

from config.settings import settings
from modcsp.exceptions import GuardExceeded, PreconditionError, StructureError, TermError
from modcsp.homcount import compile_instance, require_prime
from modcsp.structures import Constraint, CspInstance, MultiSortedStructure, Relation

logger = logging.getLogger(__name__)

Args = Tuple[str, ...]


class OperationTable:
    """多类别 n 元运算：每个类别一张 H_i^n → H_i 的表"""

    def __init__(self, arity: int, domains: Mapping[str, Sequence[str]],
                 tables: Mapping[str, Mapping[Args, str]]):
        self.arity = arity
        self.domains = {s: tuple(e) for s, e in domains.items()}
        self.tables = {s: dict(t) for s, t in tables.items()}
        for sort, elements in self.domains.items():
            table = self.tables.get(sort, {})
            if len(table) != len(elements) ** arity:
                raise StructureError("运算表不完整", f"sort {sort}")

    @classmethod
    def from_function(cls, domains: Mapping[str, Sequence[str]], arity: int,
                      fn: Callable[[str, Args], str]) -> "OperationTable":
        tables = {
            sort: {args: fn(sort, args) for args in itertools.product(elements, repeat=arity)}
            for sort, elements in domains.items()
        }
        return cls(arity, domains, tables)

    @classmethod
    def projection(cls, domains: Mapping[str, Sequence[str]], arity: int, index: int) -> "OperationTable":
        return cls.from_function(domains, arity, lambda sort, args: args[index])

    def __call__(self, sort: str, *args: str) -> str:
        return self.tables[sort][tuple(args)]

    def key(self) -> Tuple:
        return tuple(
            (sort, tuple(self.tables[sort][args] for args in itertools.product(elements, repeat=self.arity)))
            for sort, elements in sorted(self.domains.items())
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, OperationTable) and self.arity == other.arity and self.key() == other.key()

    def __hash__(self) -> int:
        return hash((self.arity, self.key()))

    def __repr__(self) -> str:
        return f"OperationTable(arity={self.arity}, sorts={list(self.domains)})"

    def section(self, sort: str, first: str) -> Dict[str, str]:
        """二元运算的截面 f(first, ·)"""
        return {b: self.tables[sort][(first, b)] for b in self.domains[sort]}

    def apply_rows(self, sort_type: Sequence[str], rows: Sequence[Sequence[str]]) -> Tuple[str, ...]:
        """按坐标作用到若干元组上"""
        return tuple(self.tables[srt][tuple(row[k] for row in rows)] for k, srt in enumerate(sort_type))

    def preserves(self, relation: Relation, max_tuples: Optional[int] = None,
                  skipped: Optional[List[str]] = None) -> Optional[Tuple[Tuple[str, ...], ...]]:
        """
        检查是否保持关系

        Args:
            skipped: 因超过 max_tuples 而跳过检查时，把说明追加到这里

        Returns:
            违反时返回一组输入元组，否则 None；超过 max_tuples 时跳过检查返回 None
        """
        if max_tuples is not None and len(relation) > max_tuples:
            note = f"关系 {relation.name} 有 {len(relation)} 个元组，超过上限 {max_tuples}，未检查保持性"
            logger.warning(note)
            if skipped is not None and note not in skipped:
                skipped.append(note)
            return None
        members = relation.tuple_set
        for rows in itertools.product(relation.tuples, repeat=self.arity):
            if self.apply_rows(relation.sort_type, rows) not in members:
                return rows
        return None

    def is_polymorphism_of(self, structure: MultiSortedStructure) -> bool:
        return all(self.preserves(r) is None for r in structure.relations)

    def is_maltsev(self) -> bool:
        if self.arity != 3:
            return False
        return all(self.tables[s][(a, b, b)] == a and self.tables[s][(b, b, a)] == a
                   for s, elements in self.domains.items() for a in elements for b in elements)

    def is_minority(self) -> bool:
        if self.arity != 3:
            return False
        return all(self.tables[s][(a, b, b)] == a and self.tables[s][(b, b, a)] == a
                   and self.tables[s][(b, a, b)] == a
                   for s, elements in self.domains.items() for a in elements for b in elements)

    def restrict(self, sorts: Iterable[str]) -> "OperationTable":
        sorts = list(sorts)
        return OperationTable(self.arity, {s: self.domains[s] for s in sorts}, {s: self.tables[s] for s in sorts})

    def to_dict(self) -> dict:
        return {
            "arity": self.arity,
            "tables": {
                sort: [{"args": list(args), "value": value} for args, value in sorted(table.items())]
                for sort, table in self.tables.items()
            },
        }


def operation_from_dict(payload: Mapping, domains: Mapping[str, Sequence[str]]) -> OperationTable:
    tables = {sort: {tuple(row["args"]): str(row["value"]) for row in rows}
              for sort, rows in payload["tables"].items()}
    return OperationTable(int(payload["arity"]), domains, tables)


def compose(outer: OperationTable, inner: Sequence[OperationTable]) -> OperationTable:
    """g(f_1, ..., f_n)"""
    if len(inner) != outer.arity:
        raise TermError(f"复合需要 {outer.arity} 个运算, 实际 {len(inner)}")
    arity = inner[0].arity
    if any(f.arity != arity for f in inner):
        raise TermError("内层运算元数不一致")
    return OperationTable.from_function(
        outer.domains, arity,
        lambda sort, args: outer.tables[sort][tuple(f.tables[sort][args] for f in inner)])


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(.))")


@dataclass(frozen=True)
class Term:
    symbol: str
    args: Tuple["Term", ...] = ()

    @property
    def is_variable(self) -> bool:
        return not self.args

    def __str__(self) -> str:
        if not self.args:
            return self.symbol
        return f"{self.symbol}({','.join(str(a) for a in self.args)})"

    def symbols(self) -> set:
        if not self.args:
            return set()
        result = {self.symbol}
        for a in self.args:
            result |= a.symbols()
        return result

    def rename(self, mapping: Mapping[str, str]) -> "Term":
        return Term(mapping.get(self.symbol, self.symbol), tuple(a.rename(mapping) for a in self.args))

    def evaluate(self, env: Mapping[str, str], interpret: Callable[[str, Tuple[str, ...]], str]) -> str:
        if not self.args:
            if self.symbol not in env:
                raise TermError(f"未绑定的变量 {self.symbol}")
            return env[self.symbol]
        values = tuple(a.evaluate(env, interpret) for a in self.args)
        return interpret(self.symbol, values)


def parse_term(text: str, variables: Sequence[str] = ("x", "y", "z")) -> Term:
    """递归下降解析形如 f1(y,f1(x,y)) 的项"""
    tokens = []
    for match in _TOKEN.finditer(text):
        ident, other = match.groups()
        if ident:
            tokens.append(ident)
        elif other and not other.isspace():
            tokens.append(other)
    position = 0

    def peek():
        return tokens[position] if position < len(tokens) else None

    def take(expected=None):
        nonlocal position
        token = peek()
        if token is None or (expected is not None and token != expected):
            raise TermError(f"项解析失败: 期望 {expected or '符号'}, 得到 {token} ({text})")
        position += 1
        return token

    def parse() -> Term:
        symbol = take()
        if not re.match(r"[A-Za-z_]", symbol):
            raise TermError(f"项解析失败: 非法符号 {symbol} ({text})")
        if peek() != "(":
            if symbol not in variables:
                raise TermError(f"未声明的变量 {symbol} ({text})")
            return Term(symbol)
        take("(")
        args = [parse()]
        while peek() == ",":
            take(",")
            args.append(parse())
        take(")")
        return Term(symbol, tuple(args))

    term = parse()
    if position != len(tokens):
        raise TermError(f"项末尾有多余内容 ({text})")
    return term


def eval_term(term: Term, env: Mapping[str, OperationTable], variables: Sequence[str] = ("x", "y")) -> OperationTable:
    """把项在给定运算下求值为 len(variables) 元运算"""
    if not env:
        raise TermError("运算环境为空")
    domains = next(iter(env.values())).domains

    def interpret_for(sort):
        def interpret(symbol, values):
            if symbol not in env:
                raise TermError(f"未绑定的运算符号 {symbol}")
            op = env[symbol]
            if op.arity != len(values):
                raise TermError(f"{symbol} 的元数为 {op.arity}, 实际给出 {len(values)} 个参数")
            return op.tables[sort][values]
        return interpret

    return OperationTable.from_function(
        domains, len(variables),
        lambda sort, args: term.evaluate(dict(zip(variables, args)), interpret_for(sort)))


def indicator_variable(sort: str, args: Args) -> str:
    return f"{sort}[{','.join(args)}]"


def indicator_instance(structure: MultiSortedStructure, arity: int = 3) -> CspInstance:
    """
    指示实例：变量为 (类别, 参数元组)，每个关系对每组 arity 个元组给出一个约束。
    其解与 arity 元多态一一对应。
    """
    variables = [(indicator_variable(s.name, args), s.name)
                 for s in structure.sorts for args in itertools.product(s.elements, repeat=arity)]
    constraints = []
    for r in structure.relations:
        for rows in itertools.product(r.tuples, repeat=arity):
            scope = tuple(indicator_variable(r.sort_type[k], tuple(row[k] for row in rows)) for k in range(r.arity))
            constraints.append(Constraint(r.name, scope))
    return CspInstance(tuple(variables), tuple(constraints))


def _search_order(instance: CspInstance, pinned: Iterable[str]) -> List[int]:
    """已固定的变量优先，其余按约束度数降序"""
    pinned = set(pinned)
    degree = {name: 0 for name, _ in instance.variables}
    for c in instance.constraints:
        for v in set(c.scope):
            degree[v] += 1
    names = instance.variable_names
    return sorted(range(len(names)), key=lambda k: (names[k] not in pinned, -degree[names[k]], k))


def iter_polymorphisms(structure: MultiSortedStructure, arity: int = 3,
                       pins: Optional[Mapping[Tuple[str, Args], str]] = None,
                       canonical: bool = False,
                       distinct_sections: bool = False) -> Iterator[OperationTable]:
    """
    枚举多态

    Args:
        pins: (类别, 参数元组) → 值
        canonical: 按规范变量顺序搜索，结果按规范序给出
        distinct_sections: 要求每个截面 f(a, ·) 是置换（仅二元）
    """

    instance = indicator_instance(structure, arity)
    domains = {}
    for (sort, args), value in (pins or {}).items():
        domains[indicator_variable(sort, tuple(args))] = value
    order = None if canonical else _search_order(instance, domains)

    space = compile_instance(instance, structure, domains, order=order)
    if distinct_sections:
        if arity != 2:
            raise PreconditionError("截面置换约束只适用于二元运算")
        groups = {}
        group_id = 0
        k = 0
        for s in structure.sorts:
            for _ in s.elements:
                for _ in s.elements:
                    groups[k] = group_id
                    k += 1
                group_id += 1
        rank = {v: level for level, v in enumerate(space.order)}
        space.groups = [None] * space.size
        for v, g in groups.items():
            space.groups[rank[v]] = g
        space.suffix_free = [False] * (space.size + 1)
        space.suffix_free[space.size] = True

    sorts = [(s.name, s.elements, list(itertools.product(s.elements, repeat=arity))) for s in structure.sorts]
    for solution in space.iter_solutions():
        tables = {}
        k = 0
        for sort, elements, cube in sorts:
            table = {}
            for args in cube:
                table[args] = elements[solution[k]]
                k += 1
            tables[sort] = table
        yield OperationTable(arity, {name: el for name, el, _ in sorts}, tables)


def enumerate_polymorphisms(structure: MultiSortedStructure, arity: int = 3,
                            pins: Optional[Mapping[Tuple[str, Args], str]] = None,
                            max_solutions: Optional[int] = None) -> List[OperationTable]:
    """枚举全部多态（按规范序排列），超过 max_solutions 时抛出 GuardExceeded"""
    limit = settings.POLY_MAX_SOLUTIONS if max_solutions is None else max_solutions
    result = []
    for f in iter_polymorphisms(structure, arity, pins):
        result.append(f)
        if len(result) > limit:
            raise GuardExceeded("polymorphism_enumeration", len(result), limit)
    result.sort(key=lambda f: f.key())
    return result


@dataclass(frozen=True)
class IndicatorCoordinates:
    """
    H^(3) 坐标的划分 I / J / E 以及特征元组 a_H, b_H, c_H, d_H

    I 由 (a,b,b) 组成（a 外层、b 内层），J 由 a≠b 的 (b,b,a) 组成（b 外层、a 内层）。
    """
    I: Tuple[Tuple[str, Args], ...]
    J: Tuple[Tuple[str, Args], ...]
    E: Tuple[Tuple[str, Args], ...]
    a: Tuple[str, ...]
    b: Tuple[str, ...]
    c: Tuple[str, ...]
    d: Tuple[str, ...]

    @property
    def all(self) -> Tuple[Tuple[str, Args], ...]:
        return self.I + self.J + self.E


def indicator_coordinates(structure: MultiSortedStructure) -> IndicatorCoordinates:
    I, J, E = [], [], []
    a_h, b_h, c_h, d_h = [], [], [], []
    for s in structure.sorts:
        for a in s.elements:
            for b in s.elements:
                I.append((s.name, (a, b, b)))
                a_h.append(a)
                b_h.append(b)
        for b in s.elements:
            for a in s.elements:
                if a != b:
                    J.append((s.name, (b, b, a)))
                    c_h.append(b)
                    d_h.append(a)
        taken = {t for srt, t in I + J if srt == s.name}
        E.extend((s.name, t) for t in itertools.product(s.elements, repeat=3) if t not in taken)
    return IndicatorCoordinates(tuple(I), tuple(J), tuple(E), tuple(a_h), tuple(b_h), tuple(c_h), tuple(d_h))


def maltsev_pins(structure: MultiSortedStructure) -> Dict[Tuple[str, Args], str]:
    pins = {}
    for s in structure.sorts:
        for a in s.elements:
            for b in s.elements:
                pins[(s.name, (a, b, b))] = a
                pins[(s.name, (b, b, a))] = a
    return pins


def has_maltsev(structure: MultiSortedStructure) -> Optional[OperationTable]:
    """返回一个 Mal'tsev 多态，不存在时返回 None"""
    m = next(iter_polymorphisms(structure, 3, maltsev_pins(structure)), None)
    if m is not None and not m.is_maltsev():
        raise RuntimeError("Mal'tsev 搜索返回了不满足恒等式的运算")
    return m


def maltsev_criterion(structure: MultiSortedStructure, max_solutions: Optional[int] = None) -> bool:
    """通过 (a_H, d_H) ∈ pr_{I∪J} Υ₃ 判定，与 has_maltsev 独立"""
    coords = indicator_coordinates(structure)
    target = coords.a + coords.d
    pinned = coords.I + coords.J
    for f in enumerate_polymorphisms(structure, 3, max_solutions=max_solutions):
        if tuple(f(sort, *t) for sort, t in pinned) == target:
            return True
    return False


@dataclass(frozen=True)
class RectangularityViolation:
    """(a,c),(a,d),(b,c) ∈ R 而 (b,d) ∉ R"""
    left: Tuple[int, ...]
    a: Tuple[str, ...]
    b: Tuple[str, ...]
    c: Tuple[str, ...]
    d: Tuple[str, ...]


def is_rectangular(relation: Relation) -> Optional[RectangularityViolation]:
    """
    检查关系对每个坐标划分都是矩形的

    Returns:
        第一个违反（按左侧大小、再按字典序），矩形时返回 None
    """
    k = relation.arity
    coords = list(range(k))
    for size in range(1, k):
        for left in itertools.combinations(coords, size):
            right = [i for i in coords if i not in left]
            rights: Dict[Tuple[str, ...], List[Tuple[str, ...]]] = {}
            for t in relation.tuples:
                rights.setdefault(tuple(t[i] for i in left), []).append(tuple(t[i] for i in right))
            lefts = list(rights)
            members = {key: set(vals) for key, vals in rights.items()}
            for a in lefts:
                for b in lefts:
                    if a == b:
                        continue
                    shared = members[a] & members[b]
                    if not shared:
                        continue
                    c = next(x for x in rights[a] if x in shared)
                    for d in rights[a]:
                        if d not in members[b]:
                            return RectangularityViolation(left, a, b, c, d)
    return None


def section_orders(f: OperationTable) -> Optional[Dict[Tuple[str, str], int]]:
    """二元运算每个截面 f(a,·) 的置换阶；若有截面不是置换则返回 None"""
    orders = {}
    for sort, elements in f.domains.items():
        position = {e: i for i, e in enumerate(elements)}
        for a in elements:
            images = [position[f(sort, a, b)] for b in elements]
            if len(set(images)) != len(images):
                return None
            orders[(sort, a)] = int(Permutation(images).order()) if images else 1
    return orders


def p_automorphic_witness(f: OperationTable, p: int) -> Optional[Tuple[str, str]]:
    """若 f 是 p-自同构的（所有截面阶 ∈ {1,p} 且至少一个为 p），返回阶为 p 的截面"""
    orders = section_orders(f)
    if orders is None:
        return None
    if any(o not in (1, p) for o in orders.values()):
        return None
    return next((key for key, o in orders.items() if o == p), None)


@dataclass(frozen=True)
class AutomorphicPolynomial:
    operation: OperationTable
    witness: Tuple[str, str]


def find_p_automorphic_polynomial(structure: MultiSortedStructure, p: int,
                                  max_solutions: Optional[int] = None) -> Optional[AutomorphicPolynomial]:
    """按规范序寻找第一个 p-自同构二元多态"""
    p = require_prime(p)
    limit = settings.POLY_MAX_SOLUTIONS if max_solutions is None else max_solutions
    seen = 0
    for f in iter_polymorphisms(structure, 2, canonical=True, distinct_sections=True):
        seen += 1
        if seen > limit:
            raise GuardExceeded("automorphic_polynomial_search", seen, limit)
        witness = p_automorphic_witness(f, p)
        if witness is not None:
            logger.info(f"找到 {p}-自同构多项式, 截面 {witness}")
            return AutomorphicPolynomial(f, witness)
    return None


@dataclass(frozen=True)
class MinorityConstruction:
    minority: OperationTable
    types: Dict[str, int] = field(compare=False)
    steps: Dict[str, OperationTable] = field(compare=False)


MINORITY_TERMS = {
    "f": "m(m(x,y,z),x,m(x,z,y))",
    "g": "f(x,x,y)",
    "h": "g(m(x,y,z),f(x,y,z))",
}


def minority_from_maltsev(m: OperationTable) -> MinorityConstruction:
    """
    由两元素类别上的 Mal'tsev 运算构造 minority 运算

    类型按 (m(a,b,a), m(b,a,b)) 区分：0 ↦ (b,a)，1 ↦ (a,b)，2 ↦ (a,a)，3 ↦ (b,b)。
    """
    if not m.is_maltsev():
        raise PreconditionError("输入运算不是 Mal'tsev 运算")
    types = {}
    for sort, elements in m.domains.items():
        if len(elements) > 2:
            raise PreconditionError(f"类别 {sort} 超过两个元素")
        if len(elements) < 2:
            continue
        a, b = elements
        pair = (m(sort, a, b, a), m(sort, b, a, b))
        types[sort] = {(b, a): 0, (a, b): 1, (a, a): 2, (b, b): 3}[pair]

    variables3 = ("x", "y", "z")
    f = eval_term(parse_term(MINORITY_TERMS["f"]), {"m": m}, variables3)
    g = eval_term(parse_term(MINORITY_TERMS["g"]), {"f": f}, ("x", "y"))
    h = eval_term(parse_term(MINORITY_TERMS["h"]), {"m": m, "f": f, "g": g}, variables3)
    if not h.is_minority():
        raise RuntimeError(f"构造结果不是 minority 运算, 类型 {types}")
    return MinorityConstruction(h, types, {"f": f, "g": g})


@dataclass(frozen=True)
class SquareAutomorphismResult:
    operation: OperationTable
    case: str
    reading: str


SQUARE_CASES = {
    # (ab 的像, ac 的像) → 项
    "swap-ab-fix-ac": "g1(g2(x,y),g1(x,y))",
    "swap-ab-swap-ac": "g1(x,g1(y,x))",
    "fix-ab": "g1(x,y)",
}

SQUARE_READINGS = ("literal", "transposed", "swapped", "swapped-transposed")


def _square_case(g1: OperationTable, g2: OperationTable, sort: str, a: str, b: str, c: str) -> str:
    image_ab = (g1(sort, a, b), g2(sort, a, b))
    image_ac = (g1(sort, a, c), g2(sort, a, c))
    if image_ab == (a, b):
        return "fix-ab"
    if image_ab == (b, a):
        return "swap-ab-fix-ac" if image_ac == (a, c) else "swap-ab-swap-ac"
    raise PreconditionError(f"g 在 ab 处的像 {image_ab} 不在已知情形中")


def two_auto_poly_from_square_automorphism(structure: MultiSortedStructure,
                                           g1: OperationTable, g2: OperationTable,
                                           a: str, b: str, c: str, p: int = 2) -> SquareAutomorphismResult:
    """
    由 H² 上把 (c,a) 送到 (c,b) 的自同构 g = (g1, g2) 构造 2-自同构多项式

    依次尝试字面读法、结果转置、两分量交换、交换且转置，返回第一个通过验证的。
    """
    sorts = list(g1.domains)
    if len(sorts) != 1:
        raise PreconditionError("只适用于单类别结构")
    sort = sorts[0]
    if (g1(sort, c, a), g2(sort, c, a)) != (c, b):
        raise PreconditionError("g 不把 (c,a) 送到 (c,b)")
    case = _square_case(g1, g2, sort, a, b, c)
    term = parse_term(SQUARE_CASES[case], ("x", "y"))
    for reading in SQUARE_READINGS:
        env = {"g1": g2, "g2": g1} if reading.startswith("swapped") else {"g1": g1, "g2": g2}
        f = eval_term(term, env)
        if reading.endswith("transposed"):
            f = OperationTable.from_function(f.domains, 2, lambda s, args: f(s, args[1], args[0]))
        if p_automorphic_witness(f, p) is not None and f.is_polymorphism_of(structure):
            return SquareAutomorphismResult(f, case, reading)
    raise PreconditionError(f"情形 {case} 的所有读法都不给出 {p}-自同构多项式")
