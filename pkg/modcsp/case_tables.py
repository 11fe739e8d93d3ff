"""
案例表校验模块

读取 data/case_tables.json 中的案例表，对每一行：
由表头和行给出 H^(3) 上 2 阶 M-自同构 g 的部分取值，
对未确定的三元组按双射与对合约束补全，在每个补全上求项的值，
并与目标 2-自同构多项式比较。
"""
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from joblib import Parallel, delayed

from config.paths import CASE_TABLES_PATH
from config.search_config import search_config
from config.settings import settings
from modcsp.exceptions import StructureError
from modcsp.polyclone import OperationTable, Term, parse_term, p_automorphic_witness

logger = logging.getLogger(__name__)

ELEMENTS = ("0", "1", "2")
POINTS = tuple(itertools.product(ELEMENTS, repeat=2))
CUBE = tuple("".join(t) for t in itertools.product(ELEMENTS, repeat=3))
ACCEPTANCE_ORDER = ("xy", "yx", "generated")


def m_fixed_triples() -> Dict[str, str]:
    """(a,b,b)、(b,b,a) 形式的三元组（含对角线）在 M-自同构下不动"""
    fixed = {}
    for a in ELEMENTS:
        for b in ELEMENTS:
            fixed[a + b + b] = a + b + b
            fixed[b + b + a] = b + b + a
    return fixed


@dataclass
class TableRow:
    table: str
    index: int
    images: Dict[str, str]
    term: str
    mirror: bool = False
    interpretation: str = ""
    note: str = ""


@dataclass
class RowCheck:
    """单行校验结果"""
    table: str
    row: int
    term: str
    mirror: bool
    status: str
    acceptance: List[str] = field(default_factory=list)
    completions: int = 0
    accepted: int = 0
    note: str = ""


@dataclass
class CaseTableReport:
    rows: List[RowCheck]
    square_rows: List[RowCheck]

    @property
    def summary(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for r in self.rows + self.square_rows:
            counts[r.status] = counts.get(r.status, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "rows": [asdict(r) for r in self.rows],
            "square_table": [asdict(r) for r in self.square_rows],
        }


def load_case_tables(path: Optional[str] = None) -> dict:
    path = path or CASE_TABLES_PATH
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise StructureError("案例表文件不存在", path) from None
    except json.JSONDecodeError as exc:
        raise StructureError(f"案例表文件不是合法 JSON: {exc}", path) from None


def target_operation(payload: Optional[dict] = None) -> Dict[Tuple[str, str], str]:
    if payload is None:
        payload = load_case_tables()
    return {(k[0], k[1]): v for k, v in payload["target"]["table"].items()}


def table_rows(payload: dict, include_mirrors: bool = True) -> List[TableRow]:
    rows = []
    for table in payload["tables"]:
        for index, row in enumerate(table["rows"], start=1):
            images = dict(table["header"])
            images.update(row["images"])
            rows.append(TableRow(table["id"], index, images, row["term"],
                                 interpretation=row.get("interpretation", ""), note=row.get("notation_note", "")))
            if include_mirrors and _mirrorable(row["images"], row["term"]):
                rows.append(mirror_row(rows[-1]))
    return rows


def _mirrorable(images: Mapping[str, str], term: str) -> bool:
    return all(k == k[::-1] for k in images) and not term.lstrip().startswith("g")


def mirror_row(row: TableRow) -> TableRow:
    """三元组反转对应的对称行：像全部反转，f1 与 f3 互换"""
    images = {k[::-1]: v[::-1] for k, v in row.images.items()}
    term = str(parse_term(row.term, ("x", "y")).rename({"f1": "f3", "f3": "f1"})) if "(" in row.term \
        else {"f1": "f3", "f3": "f1"}.get(row.term, row.term)
    return TableRow(row.table, row.index, images, term, mirror=True,
                    interpretation=row.interpretation, note=row.note)


class _Unresolved(Exception):
    def __init__(self, key: str):
        self.key = key


def _close_involution(images: Mapping[str, str], fixed: Mapping[str, str]) -> Tuple[Dict[str, str], Dict[str, str], str]:
    """
    由给定的像构造对合的部分映射

    Returns:
        (确定的映射, 带 * 的模式, 不一致说明)
    """
    g = dict(fixed)
    patterns = {}
    note = ""
    for key, value in images.items():
        if "*" in value:
            patterns[key] = value
            continue
        for a, b in ((key, value), (value, key)):
            if g.get(a, b) != b:
                note = f"{a} 的像冲突: {g[a]} 与 {b}"
            g.setdefault(a, b)
    values = [v for v in g.values()]
    if len(values) != len(set(values)):
        note = note or "给定的像不是单射"
    return g, patterns, note


def _matches(pattern: Optional[str], candidate: str) -> bool:
    if pattern is None:
        return True
    return all(p == "*" or p == c for p, c in zip(pattern, candidate))


def _candidates(g: Mapping[str, str], key: str, universe: Sequence[str],
                patterns: Mapping[str, str]) -> List[str]:
    used = set(g.values())
    result = []
    for cand in universe:
        if cand in used or not _matches(patterns.get(key), cand):
            continue
        if cand != key and cand in g and g[cand] != key:
            continue
        if cand != key and cand not in g and not _matches(patterns.get(cand), key):
            continue
        result.append(cand)
    return result


def _completions(term: Term, g0: Dict[str, str], patterns: Mapping[str, str], universe: Sequence[str],
                 table_of: Callable[[Term, Mapping[str, str]], Dict]) -> List[Dict]:
    """在所有一致的补全上求运算表（按需展开未知三元组）"""
    leaves = []

    def run(g):
        try:
            leaves.append(table_of(term, g))
        except _Unresolved as missing:
            for cand in _candidates(g, missing.key, universe, patterns):
                extended = dict(g)
                extended[missing.key] = cand
                extended.setdefault(cand, missing.key)
                run(extended)

    run(g0)
    return leaves


def _cube_table(term: Term, g: Mapping[str, str]) -> Dict[Tuple[str, str], str]:
    def interpret(symbol, values):
        component = int(symbol[1:]) - 1
        key = "".join(values) if symbol[0] == "g" else values[0] + values[1] + values[0]
        if key not in g:
            raise _Unresolved(key)
        return g[key][component]

    return {(x, y): term.evaluate({"x": x, "y": y}, interpret) for x, y in POINTS}


def binary_clone_contains(op: Mapping[Tuple[str, str], str], target: Mapping[Tuple[str, str], str],
                          limit: Optional[int] = None) -> bool:
    """target 是否属于由 op 生成的二元克隆（从两个投影出发闭包）"""
    limit = limit or search_config.CASE_TABLES['clone_size_limit']
    goal = tuple(target[pt] for pt in POINTS)
    x = tuple(pt[0] for pt in POINTS)
    y = tuple(pt[1] for pt in POINTS)
    members = {x, y}
    frontier = [x, y]
    while frontier and len(members) <= limit:
        fresh = []
        recent = set(frontier)
        current = list(members)
        for s in current:
            for t in current:
                if s not in recent and t not in recent:
                    continue
                image = tuple(op[(s[k], t[k])] for k in range(len(POINTS)))
                if image not in members:
                    members.add(image)
                    fresh.append(image)
        if goal in members:
            return True
        frontier = fresh
    return goal in members


def accept_table(table: Mapping[Tuple[str, str], str], target: Mapping[Tuple[str, str], str]) -> Optional[str]:
    if all(table[pt] == target[pt] for pt in POINTS):
        return "xy"
    if all(table[(x, y)] == target[(y, x)] for x, y in POINTS):
        return "yx"
    if binary_clone_contains(table, target):
        return "generated"
    return None


def _summarize(row_id: Tuple[str, int], term: str, mirror: bool, leaves, accept, note: str) -> RowCheck:
    modes = [accept(t) for t in leaves]
    accepted = [m for m in modes if m is not None]
    if note:
        status = "tentative"
    elif not leaves:
        status, note = "tentative", "没有一致的补全"
    elif len(accepted) == len(leaves):
        status = "pass"
    elif accepted:
        status = "tentative"
        note = f"{len(accepted)}/{len(leaves)} 个补全通过"
    else:
        status = "fail"
    return RowCheck(row_id[0], row_id[1], term, mirror, status,
                    sorted(set(accepted), key=lambda m: ACCEPTANCE_ORDER.index(m) if m in ACCEPTANCE_ORDER else 9),
                    len(leaves), len(accepted), note)


def check_row(row: TableRow, target: Mapping[Tuple[str, str], str]) -> RowCheck:
    """校验单行"""
    variables = ("x", "y")
    term = parse_term(row.term, variables) if "(" in row.term else None
    if term is None:
        # 单个运算符号 f_i 表示 f_i(x,y)
        term = Term(row.term, (Term("x"), Term("y")))
    g0, patterns, note = _close_involution(row.images, m_fixed_triples())
    leaves = _completions(term, g0, patterns, CUBE, _cube_table)
    result = _summarize((row.table, row.index), row.term, row.mirror, leaves,
                        lambda t: accept_table(t, target), note)
    if result.status == "fail" and row.interpretation == "tentative":
        # 记号有歧义的行：按字面读法不通过，只报告为待定
        result.status = "tentative"
        result.note = row.note or "记号读法待定"
    return result


def _square_universe(elements: Sequence[str]) -> List[str]:
    return ["".join(t) for t in itertools.product(elements, repeat=2)]


def check_square_row(index: int, row: Mapping, table: Mapping) -> List[RowCheck]:
    """H² 自同构表的一行：按四种读法分别检查是否得到 2-自同构运算"""
    a, b, c = table["a"], table["b"], table["c"]
    elements = tuple(table["elements"])
    fixed = {u + u: u + u for u in elements}
    images = dict(row["images"])
    images.setdefault(c + a, c + b)
    g0, patterns, note = _close_involution(images, fixed)
    term = parse_term(row["term"], ("x", "y"))
    domains = {"H": elements}
    results = []
    for reading in ("literal", "transposed", "swapped", "swapped-transposed"):
        swap = reading.startswith("swapped")
        transpose = reading.endswith("transposed")

        def table_of(t, g, swap=swap):
            def interpret(symbol, values):
                component = int(symbol[1:]) - 1
                if swap:
                    component = 1 - component
                key = "".join(values)
                if key not in g:
                    raise _Unresolved(key)
                return g[key][component]
            return {(x, y): t.evaluate({"x": x, "y": y}, interpret) for x in elements for y in elements}

        leaves = _completions(term, g0, patterns, _square_universe(elements), table_of)

        def accept(table, transpose=transpose):
            op = OperationTable.from_function(
                domains, 2, lambda s, args: table[(args[1], args[0])] if transpose else table[args])
            return reading if p_automorphic_witness(op, 2) is not None else None

        results.append(_summarize(("square", index), row["term"], False, leaves, accept, note))
    return results


def _square_verdict(index: int, checks: List[RowCheck]) -> RowCheck:
    passing = [c for c in checks if c.status == "pass"]
    if passing:
        best = passing[0]
        return RowCheck("square", index, best.term, False, "pass", best.acceptance, best.completions,
                        best.accepted, best.note)
    partial = [c for c in checks if c.status == "tentative"]
    base = partial[0] if partial else checks[0]
    return RowCheck("square", index, base.term, False, "tentative" if partial else "fail",
                    base.acceptance, base.completions, base.accepted, "没有任何读法通过")


def verify_case_tables(path: Optional[str] = None, n_jobs: Optional[int] = None,
                       include_mirrors: Optional[bool] = None) -> CaseTableReport:
    """校验全部案例表行，按数据文件中的顺序给出结果"""
    payload = load_case_tables(path)
    target = target_operation(payload)
    if include_mirrors is None:
        include_mirrors = search_config.CASE_TABLES['include_mirrors']
    rows = table_rows(payload, include_mirrors)
    n_jobs = settings.N_JOBS if n_jobs is None else n_jobs
    logger.info(f"校验 {len(rows)} 行案例表")
    checks = Parallel(n_jobs=n_jobs)(delayed(check_row)(row, target) for row in rows)

    square_rows = []
    table = payload.get("square_table")
    if table:
        for index, row in enumerate(table["rows"], start=1):
            square_rows.append(_square_verdict(index, check_square_row(index, row, table)))

    report = CaseTableReport(list(checks), square_rows)
    for check in report.rows + report.square_rows:
        if check.status != "pass":
            logger.warning(f"表 {check.table} 第 {check.row} 行: {check.status} {check.note}")
    logger.info(f"案例表校验完成: {report.summary}")
    return report


def term_library(path: Optional[str] = None) -> List[Tuple[str, int, str]]:
    """表中出现过的全部项 (表, 行, 项)，按出现顺序去重"""
    payload = load_case_tables(path)
    seen = set()
    library = []
    for table in payload["tables"]:
        for index, row in enumerate(table["rows"], start=1):
            if row["term"] not in seen:
                seen.add(row["term"])
                library.append((table["id"], index, row["term"]))
    return library


@dataclass(frozen=True)
class TablePolynomial:
    operation: OperationTable
    table: str
    row: int
    term: str
    reading: str


def polynomial_from_m_automorphism(structure, g, p: int = 2, path: Optional[str] = None) -> Optional[TablePolynomial]:
    """
    用案例表中的项在给定 M-自同构 g = (g1,g2,g3) 上求值，
    返回第一个是 H 的 p-自同构多项式的结果（依次尝试字面与转置读法）
    """
    if len(structure.sorts) != 1:
        return None
    sort = structure.sorts[0].name
    domains = {sort: structure.sorts[0].elements}
    g1, g2, g3 = g.components
    ops = {
        "f1": lambda u, v: g1(sort, u, v, u), "f2": lambda u, v: g2(sort, u, v, u),
        "f3": lambda u, v: g3(sort, u, v, u),
        "g1": lambda *a: g1(sort, *a), "g2": lambda *a: g2(sort, *a), "g3": lambda *a: g3(sort, *a),
    }

    def interpret(symbol, values):
        return ops[symbol](*values)

    for table, row, text in term_library(path):
        term = parse_term(text, ("x", "y")) if "(" in text else Term(text, (Term("x"), Term("y")))
        values = {(x, y): term.evaluate({"x": x, "y": y}, interpret) for x, y in itertools.product(domains[sort], repeat=2)}
        for reading in ("literal", "transposed"):
            op = OperationTable.from_function(
                domains, 2,
                lambda s, args: values[(args[1], args[0])] if reading == "transposed" else values[args])
            if p_automorphic_witness(op, p) is not None and op.is_polymorphism_of(structure):
                return TablePolynomial(op, table, row, text, reading)
    return None
