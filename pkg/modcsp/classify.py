"""
分类模块

把各个模块串成顶层分类器：两元素类别、p-保守结构和三元素结构。
每个结论都带着可检查的证据（最小运算、障碍证书或卡住报告）以及使用过的预算。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from config.search_config import search_config
from modcsp.autos import p_rigid_reduce
from modcsp.exceptions import PreconditionError
from modcsp.homcount import require_prime
from modcsp.mpp import (
    ClosureBudget, MaltsevUpToBudget, is_p_conservative, maltsev_for_closure, p_subalgebras,
)
from modcsp.obstruction import (
    AutomorphicPolynomialFound, ObstructionCertificate, StuckReport, base_from_verdict, build_obstruction,
    conservative_obstruction, three_element_obstruction, verify_certificate,
)
from modcsp.polyclone import OperationTable, find_p_automorphic_polynomial, minority_from_maltsev, p_automorphic_witness
from modcsp.reduce import build_Hf, nontrivial_orbits
from modcsp.structures import MultiSortedStructure, add_constants

logger = logging.getLogger(__name__)


class VerdictKind:
    POLY_TIME = "PolyTime"
    SHARP_P_HARD = "SharpPHard"
    KNOWN_OPEN_CASE = "KnownOpenCase"
    UNKNOWN = "UnknownWithinBudget"


@dataclass
class Preprocessed:
    structure: MultiSortedStructure
    trail: Dict[str, object]


@dataclass
class Verdict:
    # 1. 结论
    kind: str
    modulus: int
    subject: MultiSortedStructure
    # 2. 证据
    evidence: Dict[str, object] = field(default_factory=dict)
    certificate: Optional[ObstructionCertificate] = None
    stuck: Optional[StuckReport] = None
    reason: Optional[str] = None
    # 3. 预处理与预算
    trail: Dict[str, object] = field(default_factory=dict)
    budgets: Dict[str, object] = field(default_factory=dict)
    budget_qualified: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.kind,
            "modulus": self.modulus,
            "subject_digest": self.subject.digest(),
            "evidence": self.evidence,
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "stuck": self.stuck.to_dict() if self.stuck else None,
            "reason": self.reason,
            "trail": self.trail,
            "budgets": self.budgets,
            "budget_qualified": self.budget_qualified,
        }


def preprocess(structure: MultiSortedStructure, p: int) -> Preprocessed:
    """p-刚性约化后加入全部常量"""
    p = require_prime(p)
    reduced, chain = p_rigid_reduce(structure, p)
    normalized = add_constants(reduced)
    added = [r.name for r in normalized.relations if not reduced.has_relation(r.name)]
    trail = {
        "input_digest": structure.digest(),
        "p_rigid_chain": [a.mapping.to_dict() for a in chain],
        "constants_added": added,
        "remaining_elements": normalized.total_size,
    }
    return Preprocessed(normalized, trail)


def _budgets(budget: Optional[ClosureBudget], gadget_budget: Optional[dict]) -> Dict[str, object]:
    return {"closure": (budget or ClosureBudget.from_config()).to_dict(),
            "gadget": search_config.merged_budget('gadget', gadget_budget)}


def _trivial(prep: Preprocessed, p: int, budgets: Dict[str, object]) -> Optional[Verdict]:
    if prep.structure.total_size:
        return None
    logger.info("p-刚性约化后结构为空，解数恒为 0 (mod p)")
    return Verdict(VerdictKind.POLY_TIME, p, prep.structure, {"empty_after_reduction": True},
                   reason="约化后没有元素", trail=prep.trail, budgets=budgets)


def _hard(certificate: ObstructionCertificate, subject: MultiSortedStructure, p: int, prep: Preprocessed,
          budgets: Dict[str, object], evidence: Optional[dict] = None) -> Verdict:
    check = verify_certificate(certificate, subject, p)
    if not check:
        raise RuntimeError(f"生成的证书未通过校验: {check.divergence}")
    return Verdict(VerdictKind.SHARP_P_HARD, p, subject, dict(evidence or {}, route=certificate.route),
                   certificate=certificate, trail=prep.trail, budgets=budgets)


def _stuck(report: StuckReport, subject: MultiSortedStructure, p: int, prep: Preprocessed,
           budgets: Dict[str, object], evidence: Optional[dict] = None) -> Verdict:
    logger.warning(f"障碍构造卡在 {report.phase} 阶段: {report.reason}")
    return Verdict(VerdictKind.UNKNOWN, p, subject, dict(evidence or {}), stuck=report, reason=report.reason,
                   trail=prep.trail, budgets=budgets, budget_qualified=True)


def _maltsev_evidence(verdict: MaltsevUpToBudget) -> Dict[str, object]:
    return {"maltsev": verdict.candidate.to_dict(), "closure_status": verdict.status,
            "killed_candidates": len(verdict.killers), "limitations": list(verdict.limitations)}


def classify_2element(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                      gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None) -> Verdict:
    """
    每个类别至多两个元素

    ⟨H⟩_p 有 Mal'tsev 多态时多项式可解（附最小运算），否则给出非矩形障碍证书。
    """
    if any(s.size > 2 for s in structure.sorts):
        raise PreconditionError("classify_2element 要求每个类别至多两个元素")
    budgets = _budgets(budget, gadget_budget)
    prep = preprocess(structure, p)
    trivial = _trivial(prep, p, budgets)
    if trivial is not None:
        return trivial
    h = prep.structure

    verdict = maltsev_for_closure(h, p, budget)
    if isinstance(verdict, MaltsevUpToBudget):
        construction = minority_from_maltsev(verdict.candidate)
        evidence = _maltsev_evidence(verdict)
        evidence.update({"minority": construction.minority.to_dict(), "types": construction.types})
        logger.info(f"两元素结构在预算内保留 Mal'tsev 多态, p={p}")
        return Verdict(VerdictKind.POLY_TIME, p, h, evidence, trail=prep.trail, budgets=budgets,
                       budget_qualified=True)

    base, killers = base_from_verdict(h, verdict)
    result = build_obstruction(base, p, h.digest(), killers, "two-element", budget, gadget_budget, n_jobs)
    evidence = {"maltsev": verdict.kind}
    if isinstance(result, StuckReport):
        return _stuck(result, h, p, prep, budgets, evidence)
    return _hard(result, h, p, prep, budgets, evidence)


def classify_conservative(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                          gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None) -> Verdict:
    """p-保守结构：无 Mal'tsev 时 #P-难；有 Mal'tsev 时 p=2 可解，p>2 是已知的未解情形"""
    budgets = _budgets(budget, gadget_budget)
    prep = preprocess(structure, p)
    trivial = _trivial(prep, p, budgets)
    if trivial is not None:
        return trivial
    h = prep.structure

    conservativity = is_p_conservative(h, p, budget)
    if conservativity.status != "certified-yes":
        missing = {s: [sorted(x) for x in subsets] for s, subsets in conservativity.missing.items()}
        return Verdict(VerdictKind.UNKNOWN, p, h, {"missing_subalgebras": missing},
                       reason="预算内未能证明 p-保守", trail=prep.trail, budgets=budgets, budget_qualified=True)

    verdict = maltsev_for_closure(h, p, budget)
    if isinstance(verdict, MaltsevUpToBudget):
        evidence = _maltsev_evidence(verdict)
        if p == 2:
            return Verdict(VerdictKind.POLY_TIME, p, h, evidence, trail=prep.trail, budgets=budgets,
                           budget_qualified=True)
        return Verdict(VerdictKind.KNOWN_OPEN_CASE, p, h, evidence,
                       reason="p>2 且闭包有 Mal'tsev 多态的保守情形尚无分类", trail=prep.trail,
                       budgets=budgets, budget_qualified=True)

    result = conservative_obstruction(h, p, budget, gadget_budget, n_jobs, verdict=verdict)
    evidence = {"maltsev": verdict.kind}
    if isinstance(result, StuckReport):
        return _stuck(result, h, p, prep, budgets, evidence)
    return _hard(result, h, p, prep, budgets, evidence)


def _subalgebra_check(h: MultiSortedStructure, p: int, witness: Tuple[str, str],
                      budget: Optional[ClosureBudget]) -> Dict[str, bool]:
    """{a} 与 H−{a} 是否为 p-子代数（此时 H 与 H^f 等价）"""
    sort, a = witness
    found = {subset for subset, _ in p_subalgebras(h, p, budget).get(sort, [])}
    rest = frozenset(e for e in h.elements(sort) if e != a)
    return {"singleton": frozenset((a,)) in found, "complement": rest in found}


def _via_polynomial(h: MultiSortedStructure, f: OperationTable, witness: Tuple[str, str], p: int,
                    prep: Preprocessed, budget: Optional[ClosureBudget], gadget_budget: Optional[dict],
                    n_jobs: Optional[int], source: str) -> Verdict:
    sort, a = witness
    reduced = build_Hf(h, f, p, witness)
    inner = classify_2element(reduced, p, budget, gadget_budget, n_jobs)
    evidence = {
        "automorphic_polynomial": f.to_dict(),
        "witness": [sort, a],
        "moved": sorted(nontrivial_orbits(f, sort, a)),
        "source": source,
        "subalgebras": _subalgebra_check(h, p, witness, budget),
        "reduced": inner.evidence,
    }
    trail = dict(prep.trail, reduced_trail=inner.trail)
    return Verdict(inner.kind, p, inner.subject, evidence, inner.certificate, inner.stuck, inner.reason,
                   trail, inner.budgets, inner.budget_qualified)


def classify_3element(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
                      gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None) -> Verdict:
    """
    单类别三元素结构

    1. 有 p-自同构多项式 f 时归约到 H^f 上的两元素分类
    2. 否则闭包有 Mal'tsev 多态：p=2 可解，p>2 为已知未解情形
    3. 否则构造障碍；途中出现自同构多项式时回到第 1 步
    """
    if len(structure.sorts) != 1 or structure.sorts[0].size != 3:
        raise PreconditionError("classify_3element 要求单类别且恰有三个元素")
    budgets = _budgets(budget, gadget_budget)
    prep = preprocess(structure, p)
    trivial = _trivial(prep, p, budgets)
    if trivial is not None:
        return trivial
    h = prep.structure
    if h.sorts[0].size < 3:
        logger.info("p-刚性约化后不足三个元素，按两元素结构分类")
        inner = classify_2element(h, p, budget, gadget_budget, n_jobs)
        inner.trail = dict(prep.trail, reduced_trail=inner.trail)
        return inner

    polynomial = find_p_automorphic_polynomial(h, p)
    if polynomial is not None:
        return _via_polynomial(h, polynomial.operation, polynomial.witness, p, prep, budget, gadget_budget,
                               n_jobs, "binary-polymorphisms")

    verdict = maltsev_for_closure(h, p, budget)
    if isinstance(verdict, MaltsevUpToBudget):
        evidence = _maltsev_evidence(verdict)
        if p == 2:
            return Verdict(VerdictKind.POLY_TIME, p, h, evidence, trail=prep.trail, budgets=budgets,
                           budget_qualified=True)
        return Verdict(VerdictKind.KNOWN_OPEN_CASE, p, h, evidence,
                       reason="p>2、无自同构多项式且闭包有 Mal'tsev 多态", trail=prep.trail, budgets=budgets,
                       budget_qualified=True)

    result = three_element_obstruction(h, p, budget, gadget_budget, n_jobs, verdict=verdict)
    if isinstance(result, AutomorphicPolynomialFound):
        f = result.polynomial.operation
        witness = p_automorphic_witness(f, p)
        source = f"case-table:{result.polynomial.table}:{result.polynomial.row}"
        return _via_polynomial(h, f, witness, p, prep, budget, gadget_budget, n_jobs, source)
    evidence = {"maltsev": verdict.kind}
    if isinstance(result, StuckReport):
        return _stuck(result, h, p, prep, budgets, evidence)
    return _hard(result, h, p, prep, budgets, evidence)


def classify(structure: MultiSortedStructure, p: int, budget: Optional[ClosureBudget] = None,
             gadget_budget: Optional[dict] = None, n_jobs: Optional[int] = None) -> Verdict:
    """按结构的形状选择分类器；两族之外的结构只给出预算内未知"""
    p = require_prime(p)
    sizes = [s.size for s in structure.sorts]
    if all(size <= 2 for size in sizes):
        return classify_2element(structure, p, budget, gadget_budget, n_jobs)
    if len(sizes) == 1 and sizes[0] == 3:
        return classify_3element(structure, p, budget, gadget_budget, n_jobs)
    prep = preprocess(structure, p)
    if is_p_conservative(prep.structure, p, budget).status == "certified-yes":
        return classify_conservative(structure, p, budget, gadget_budget, n_jobs)
    return Verdict(VerdictKind.UNKNOWN, p, prep.structure, {"sort_sizes": sizes},
                   reason="结构不属于可分类的族", trail=prep.trail, budgets=_budgets(budget, gadget_budget),
                   budget_qualified=True)
