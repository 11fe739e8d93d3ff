#!/usr/bin/env python3
"""
复现管道脚本

在固定夹具和随机实例上跑一遍主要检查，并把证书和汇总报告写到 outputs/ 下。

阶段：
- basics        多态个数、Mal'tsev 判定、minority 构造
- counting      Möbius 反演与直接枚举对拍
- reduction     二元化保解数、定义域缩小保持解数模 p
- certificates  困难夹具的障碍证书生成与重放
- classify      夹具分类
- tables        案例表验证

典型用法：
    python scripts/run_pipeline.py all
    python scripts/run_pipeline.py certificates --mod 2
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict

# 添加项目根目录到Python路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from config.paths import LOGS_DIR, get_certificate_path, get_report_path
from config.search_config import search_config
from config.settings import settings
from modcsp.case_tables import verify_case_tables
from modcsp.classify import VerdictKind, classify
from modcsp.fixtures import (
    HARD_FIXTURES, STRUCTURE_FIXTURES, all_maltsev_tables, binary_relation_structures, load_operation,
    load_structure, random_instance, random_like, random_structure,
)
from modcsp.homcount import count_homs, count_injective, count_injective_mobius
from modcsp.obstruction import ObstructionCertificate, verify_certificate
from modcsp.polyclone import enumerate_polymorphisms, has_maltsev, minority_from_maltsev
from modcsp.reduce import binarize_instance, reduce_instance
from utils.reproducibility import ReproducibilityContext


def setup_root_logger(level: str = None):
    """设置根日志记录器"""
    log_dir = Path(LOGS_DIR) / 'pipeline'
    log_dir.mkdir(parents=True, exist_ok=True)
    config = search_config.LOG_CONFIG

    logging.basicConfig(
        level=(level or config['level']).upper(),
        format=config['format'],
        datefmt=config['datefmt'],
        handlers=[
            logging.FileHandler(
                log_dir / f'pipeline_{datetime.now().strftime("%Y%m%d")}.log',
                encoding='utf-8'
            ),
            logging.StreamHandler()
        ]
    )


def run_basics(args) -> Dict[str, object]:
    logger = logging.getLogger('Pipeline.Basics')
    neq2 = load_structure("neq2")
    polys = len(enumerate_polymorphisms(neq2, 3))
    maltsev = {str(i): has_maltsev(h) is not None for i, h in enumerate(binary_relation_structures())}
    minority_ok = all(minority_from_maltsev(m).minority.is_minority() for m in all_maltsev_tables(4))
    logger.info(f"NEQ2 三元多态: {polys}; 有 Mal'tsev 的二元结构: {sum(maltsev.values())}/16")
    return {"neq2_ternary_polymorphisms": polys, "maltsev_by_mask": maltsev, "minority_construction": minority_ok,
            "ok": polys == 16 and minority_ok}


def run_counting(args) -> Dict[str, object]:
    logger = logging.getLogger('Pipeline.Counting')
    mismatches = []
    cases = 0
    for k in range(args.cases):
        h = random_structure(f"mobius_h_{k}", sizes=(3, 2), relations=2, seed=args.seed)
        g = random_like(f"mobius_g_{k}", h, sizes=(1 + k % 3, 1 + k % 2), seed=args.seed)
        cases += 1
        direct, mobius = count_injective(g, h), count_injective_mobius(g, h)
        if direct != mobius:
            mismatches.append(k)
    logger.info(f"Möbius 对拍: {cases} 组, {len(mismatches)} 组不一致")
    return {"cases": cases, "mismatches": mismatches, "ok": not mismatches}


def run_reduction(args) -> Dict[str, object]:
    logger = logging.getLogger('Pipeline.Reduction')
    aff3 = load_structure("aff3")
    f = load_operation("aff3_poly", aff3)
    failures = []
    for k in range(args.cases):
        instance = random_instance(f"reduce_{k}", aff3, variables=1 + k % 6, constraints=k % 7, seed=args.seed)
        reduced = reduce_instance(instance, aff3, f, args.mod)
        before = count_homs(instance, aff3) % args.mod
        after = count_homs(reduced.instance, reduced.structure) % args.mod
        pair = binarize_instance(instance, aff3)
        if before != after or count_homs(pair.instance, pair.structure) != count_homs(instance, aff3):
            failures.append(k)
    logger.info(f"约化与二元化: {args.cases} 组, {len(failures)} 组失败")
    return {"cases": args.cases, "failures": failures, "ok": not failures}


def run_certificates(args) -> Dict[str, object]:
    logger = logging.getLogger('Pipeline.Certificates')
    results = {}
    for name in HARD_FIXTURES:
        verdict = classify(load_structure(name), args.mod, n_jobs=args.n_jobs)
        found = verdict.certificate
        if found is None:
            logger.warning(f"{name}: 未得到证书 ({verdict.kind})")
            results[name] = {"ok": False, "verdict": verdict.kind}
            continue
        # 经 JSON 往返后独立重放
        check = verify_certificate(ObstructionCertificate.from_dict(json.loads(json.dumps(found.to_dict()))),
                                   verdict.subject, args.mod)
        with open(get_certificate_path(f"{name}_p{args.mod}"), "w", encoding="utf-8") as fp:
            json.dump(found.to_dict(), fp, ensure_ascii=False, indent=2)
        results[name] = {"ok": check.ok, "route": found.route, "terminal": found.terminal}
        logger.info(f"{name}: 路线 {found.route}, 重放 {'通过' if check.ok else '失败'}")
    return {"fixtures": results, "ok": all(r["ok"] for r in results.values())}


def run_classify(args) -> Dict[str, object]:
    logger = logging.getLogger('Pipeline.Classify')
    verdicts = {}
    for name in STRUCTURE_FIXTURES:
        verdict = classify(load_structure(name), args.mod, n_jobs=args.n_jobs)
        verdicts[name] = verdict.kind
        logger.info(f"{name}: {verdict.kind}")
    return {"verdicts": verdicts, "ok": VerdictKind.UNKNOWN not in verdicts.values()}


def run_tables(args) -> Dict[str, object]:
    report = verify_case_tables(n_jobs=args.n_jobs)
    return {"summary": report.summary, "ok": report.summary.get("fail", 0) == 0}


STAGES: Dict[str, Callable] = {
    "basics": run_basics,
    "counting": run_counting,
    "reduction": run_reduction,
    "certificates": run_certificates,
    "classify": run_classify,
    "tables": run_tables,
}


def main():
    """主入口函数"""
    parser = argparse.ArgumentParser(description="modcsp 复现管道")
    parser.add_argument("stage", nargs="?", default="all", choices=["all"] + list(STAGES), help="运行的阶段")
    parser.add_argument("--mod", type=int, default=settings.DEFAULT_MODULUS, help="素数模数 (默认: 2)")
    parser.add_argument("--seed", type=int, default=settings.SEED, help="随机用例的基础种子")
    parser.add_argument("--cases", type=int, default=30, help="每个随机阶段的用例数")
    parser.add_argument("--n-jobs", type=int, default=settings.N_JOBS, help="并行任务数")
    parser.add_argument("--log-level", type=str, default=None, help="日志级别")
    args = parser.parse_args()

    setup_root_logger(args.log_level)
    logger = logging.getLogger('Pipeline')
    logger.info("=" * 50)
    logger.info(f"启动复现管道: {args.stage}, p={args.mod}, seed={args.seed}")
    logger.info("=" * 50)

    stages = list(STAGES) if args.stage == "all" else [args.stage]
    report = {}
    for stage in stages:
        with ReproducibilityContext(stage, args.seed):
            try:
                report[stage] = STAGES[stage](args)
            except Exception as e:
                logger.error(f"❌ 阶段 {stage} 执行失败: {str(e)}")
                report[stage] = {"ok": False, "error": str(e)}

    path = get_report_path(f"pipeline_{args.stage}_p{args.mod}")
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(report, fp, ensure_ascii=False, indent=2, sort_keys=True)
    success = all(r.get("ok") for r in report.values())
    logger.info(f"{'✅' if success else '⚠️'} 报告已写入 {path}")
    sys.exit(0 if success else 1)


if __name__ == '__main__':
    main()
