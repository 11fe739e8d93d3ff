"""
命令行入口

    python -m modcsp <命令> [选项]

结果以 JSON 写到标准输出（或 --output 指定的文件），诊断信息写到标准错误。
退出码：0 成功，1 卡住或预算内未知，2 输入错误。
"""
import argparse
import json
import logging
import sys
from typing import Callable, Dict, List, Optional, Tuple

from config.search_config import search_config
from config.settings import settings
from modcsp.autos import automorphisms, p_automorphisms, p_rigid_reduce
from modcsp.case_tables import verify_case_tables
from modcsp.classify import VerdictKind, classify
from modcsp.exceptions import GuardExceeded, ModcspError, PreconditionError, StructureError
from modcsp.homcount import count_homs, count_homs_mod, eval_partition_function, FpMatrix, load_digraph
from modcsp.mpp import (
    ClosureBudget, MaltsevUpToBudget, closure_search, evaluate_formula, formula_from_dict, is_p_conservative,
    maltsev_for_closure,
)
from modcsp.obstruction import (
    AutomorphicPolynomialFound, ObstructionCertificate, base_from_verdict, build_obstruction,
    conservative_obstruction, three_element_obstruction, verify_certificate,
)
from modcsp.polyclone import enumerate_polymorphisms, has_maltsev, maltsev_criterion, operation_from_dict
from modcsp.reduce import reduce_instance
from modcsp.schemas import (
    GraphFile, InstanceFile, MatrixFile, RunConfig, StructureFile, load_file, parse_model, read_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STUCK = 1
EXIT_INPUT = 2

COMMANDS = ["count", "eval-matrix", "autos", "polys", "maltsev", "mpp-eval", "closure", "obstruction",
            "verify-cert", "reduce", "classify", "verify-tables"]

Result = Tuple[dict, int]


def setup_root_logger(level: Optional[str] = None) -> None:
    """设置根日志记录器：标准错误输出，配置了 MODCSP_LOG_DIR 时同时写文件"""
    config = search_config.LOG_CONFIG
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.LOG_DIR:
        handlers.append(logging.FileHandler(search_config.get_log_file_path(settings.LOG_DIR), encoding="utf-8"))
    logging.basicConfig(
        level=(level or config['level']).upper(),
        format=config['format'],
        datefmt=config['datefmt'],
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modcsp", description="多类别结构上的模 p 计数 CSP 工具")
    parser.add_argument("command", choices=COMMANDS, help="运行的子命令")
    parser.add_argument("--structure", type=str, help="结构文件 (JSON)")
    parser.add_argument("--instance", type=str, help="实例文件 (JSON)")
    parser.add_argument("--mod", type=int, default=None, help="素数模数")
    parser.add_argument("--pin", action="append", default=[], help="固定变量取值，形如 var=elt，可重复")
    parser.add_argument("--matrix", type=str, help="矩阵文件 {p, rows}")
    parser.add_argument("--graph", type=str, help="有向图文件 {n, edges}")
    parser.add_argument("--formula", type=str, help="p-mpp 公式文件")
    parser.add_argument("--cert", type=str, help="障碍证书文件")
    parser.add_argument("--poly", type=str, help="二元运算（自同构多项式）文件")
    parser.add_argument("--arity", type=int, default=3, help="多态元数 (默认: 3)")
    parser.add_argument("--rigid-reduce", action="store_true", help="autos: 同时给出 p-刚性约化结果")
    parser.add_argument("--budget-atoms", type=int, default=None, help="闭包搜索的最大原子数")
    parser.add_argument("--budget-arity", type=int, default=None, help="闭包搜索的最大自由变量数")
    parser.add_argument("--budget-depth", type=int, default=None, help="闭包搜索的最大量词块深度")
    parser.add_argument("--budget-relations", type=int, default=None, help="闭包搜索保留的最大关系数")
    parser.add_argument("--gadget-vertices", type=int, default=None, help="小工具搜索的最大顶点数")
    parser.add_argument("--n-jobs", type=int, default=settings.N_JOBS, help="并行任务数")
    parser.add_argument("--seed", type=int, default=settings.SEED, help="随机测试使用的种子")
    parser.add_argument("--output", type=str, default=None, help="结果输出文件，默认标准输出")
    parser.add_argument("--log-level", type=str, default=None, help="日志级别")
    return parser


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise StructureError(f"缺少参数 --{name}", args.command)


def _structure(args):
    _require(args, "structure")
    return load_file(StructureFile, args.structure).to_structure()


def _modulus(config: RunConfig) -> int:
    if config.modulus is None:
        raise StructureError("缺少参数 --mod", config.command)
    return config.modulus


def _budget(config: RunConfig) -> ClosureBudget:
    return ClosureBudget.from_config(**config.closure_overrides())


def _relation_dict(relation) -> dict:
    return {"name": relation.name, "type": list(relation.sort_type), "tuples": [list(t) for t in relation.tuples]}


def _pins(values: List[str]) -> Dict[str, str]:
    pins = {}
    for item in values:
        if "=" not in item:
            raise StructureError(f"固定值格式应为 var=elt: {item}", "--pin")
        var, elt = item.split("=", 1)
        pins[var.strip()] = elt.strip()
    return pins


def cmd_count(args, config: RunConfig) -> Result:
    h = _structure(args)
    _require(args, "instance")
    instance = load_file(InstanceFile, args.instance).to_instance(h)
    pins = _pins(args.pin)
    if config.modulus is None:
        return {"count": count_homs(instance, h, pins)}, EXIT_OK
    return {"count_mod_p": count_homs_mod(instance, h, config.modulus, pins), "p": config.modulus}, EXIT_OK


def cmd_eval_matrix(args, config: RunConfig) -> Result:
    _require(args, "matrix", "graph")
    matrix_file = load_file(MatrixFile, args.matrix)
    graph_file = load_file(GraphFile, args.graph)
    matrix = FpMatrix(matrix_file.p, matrix_file.rows)
    graph = load_digraph(graph_file.n, graph_file.edges)
    return {"p": matrix.p, "value_mod_p": eval_partition_function(matrix, graph)}, EXIT_OK


def cmd_autos(args, config: RunConfig) -> Result:
    h = _structure(args)
    autos = p_automorphisms(h, config.modulus) if config.modulus else automorphisms(h)
    payload = {"automorphisms": [{"mapping": a.mapping.to_dict(), "order": a.order} for a in autos]}
    if args.rigid_reduce:
        reduced, chain = p_rigid_reduce(h, _modulus(config))
        payload["rigid_reduce"] = {"structure": reduced.to_dict(),
                                   "chain": [a.mapping.to_dict() for a in chain]}
    return payload, EXIT_OK


def cmd_polys(args, config: RunConfig) -> Result:
    h = _structure(args)
    polys = enumerate_polymorphisms(h, args.arity)
    return {"arity": args.arity, "count": len(polys), "operations": [f.to_dict() for f in polys]}, EXIT_OK


def cmd_maltsev(args, config: RunConfig) -> Result:
    h = _structure(args)
    m = has_maltsev(h)
    payload = {"has_maltsev": m is not None, "operation": m.to_dict() if m else None,
               "criterion": maltsev_criterion(h)}
    if config.modulus is None:
        return payload, EXIT_OK
    verdict = maltsev_for_closure(h, config.modulus, _budget(config))
    payload["closure"] = {"kind": verdict.kind}
    if isinstance(verdict, MaltsevUpToBudget):
        payload["closure"].update({"candidate": verdict.candidate.to_dict(), "status": verdict.status,
                                   "limitations": verdict.limitations})
    else:
        killers = getattr(verdict, "killers", [])
        payload["closure"]["killers"] = [
            {"name": k.name, "formula": k.killer.formula.to_dict(), "relation": _relation_dict(k.killer.relation),
             "violation": [list(t) for t in k.violation]} for k in killers]
    return payload, EXIT_OK


def cmd_mpp_eval(args, config: RunConfig) -> Result:
    h = _structure(args)
    _require(args, "formula")
    formula = formula_from_dict(read_json(args.formula))
    relation, strict = evaluate_formula(formula, h, _modulus(config))
    return {"relation": _relation_dict(relation), "strict": strict}, EXIT_OK


def cmd_closure(args, config: RunConfig) -> Result:
    h = _structure(args)
    result = closure_search(h, _modulus(config), _budget(config), shuffle_seed=None)
    return {
        "status": result.status,
        "rounds": result.rounds,
        "budget": result.budget.to_dict(),
        "relations": [dict(_relation_dict(d.relation), formula=d.formula.to_dict()) for d in result.relations],
    }, EXIT_OK


def _obstruction(h, p: int, config: RunConfig):
    budget = _budget(config)
    gadget = config.gadget_overrides()
    if len(h.sorts) == 1 and h.sorts[0].size <= 3:
        return three_element_obstruction(h, p, budget, gadget, config.n_jobs)
    if is_p_conservative(h, p, budget).status == "certified-yes":
        return conservative_obstruction(h, p, budget, gadget, config.n_jobs)
    base, killers = base_from_verdict(h, maltsev_for_closure(h, p, budget))
    return build_obstruction(base, p, h.digest(), killers, "generic", budget, gadget, config.n_jobs)


def cmd_obstruction(args, config: RunConfig) -> Result:
    h = _structure(args)
    result = _obstruction(h, _modulus(config), config)
    if isinstance(result, ObstructionCertificate):
        return result.to_dict(), EXIT_OK
    if isinstance(result, AutomorphicPolynomialFound):
        return {"kind": result.kind, "operation": result.polynomial.operation.to_dict(),
                "table": result.polynomial.table, "row": result.polynomial.row,
                "reading": result.polynomial.reading}, EXIT_OK
    return result.to_dict(), EXIT_STUCK


def cmd_verify_cert(args, config: RunConfig) -> Result:
    h = _structure(args)
    _require(args, "cert")
    certificate = ObstructionCertificate.from_dict(read_json(args.cert))
    p = certificate.modulus if config.modulus is None else config.modulus
    check = verify_certificate(certificate, h, p)
    return {"ok": check.ok, "divergence": check.divergence}, EXIT_OK if check.ok else EXIT_STUCK


def cmd_reduce(args, config: RunConfig) -> Result:
    h = _structure(args)
    _require(args, "instance", "poly")
    instance = load_file(InstanceFile, args.instance).to_instance(h)
    f = operation_from_dict(read_json(args.poly), h.domains())
    result = reduce_instance(instance, h, f, _modulus(config))
    return {
        "structure": result.structure.to_dict(),
        "instance": result.instance.to_dict(),
        "variable_sorts": result.variable_sorts,
        "ledger": result.ledger,
        "limitations": result.limitations,
    }, EXIT_OK


def cmd_classify(args, config: RunConfig) -> Result:
    h = _structure(args)
    verdict = classify(h, _modulus(config), _budget(config), config.gadget_overrides(), config.n_jobs)
    code = EXIT_STUCK if verdict.kind == VerdictKind.UNKNOWN else EXIT_OK
    return verdict.to_dict(), code


def cmd_verify_tables(args, config: RunConfig) -> Result:
    report = verify_case_tables(n_jobs=config.n_jobs)
    failed = report.summary.get("fail", 0)
    return report.to_dict(), EXIT_STUCK if failed else EXIT_OK


HANDLERS: Dict[str, Callable[[argparse.Namespace, RunConfig], Result]] = {
    "count": cmd_count,
    "eval-matrix": cmd_eval_matrix,
    "autos": cmd_autos,
    "polys": cmd_polys,
    "maltsev": cmd_maltsev,
    "mpp-eval": cmd_mpp_eval,
    "closure": cmd_closure,
    "obstruction": cmd_obstruction,
    "verify-cert": cmd_verify_cert,
    "reduce": cmd_reduce,
    "classify": cmd_classify,
    "verify-tables": cmd_verify_tables,
}


def _emit(payload: dict, output: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2)
    if output:
        with open(output, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_root_logger(args.log_level)

    try:
        config = parse_model(RunConfig, {
            "command": args.command, "modulus": args.mod, "seed": args.seed, "output": args.output,
            "n_jobs": args.n_jobs, "budget_atoms": args.budget_atoms, "budget_arity": args.budget_arity,
            "budget_depth": args.budget_depth, "budget_relations": args.budget_relations,
            "gadget_vertices": args.gadget_vertices,
        }, "命令行参数")
        payload, code = HANDLERS[args.command](args, config)
    except (StructureError, PreconditionError) as exc:
        logger.error(f"输入错误: {exc}")
        return EXIT_INPUT
    except GuardExceeded as exc:
        logger.error(f"超出枚举上限: {exc}")
        return EXIT_STUCK
    except ModcspError as exc:
        logger.error(f"输入错误: {exc}")
        return EXIT_INPUT

    _emit(payload, config.output)
    return code


if __name__ == "__main__":
    sys.exit(main())
