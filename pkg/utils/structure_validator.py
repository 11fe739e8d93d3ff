"""
结构质量检查器

收集多类别结构的全部问题（而不是遇到第一个就停止），供加载文件时给出完整报告。
"""

from typing import List
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)


@dataclass
class ValidationIssue:
    message: str
    location: str


@dataclass
class ValidationResult:
    """结构验证结果"""
    is_valid: bool
    errors: List[ValidationIssue] = field(default_factory=list)
    warnings: List[ValidationIssue] = field(default_factory=list)


class StructureValidator:
    """结构质量检查器（按属性访问，不依赖具体类型）"""

    def validate_structure(self, structure) -> ValidationResult:
        errors: List[ValidationIssue] = []
        warnings: List[ValidationIssue] = []

        # 1. 类别检查
        sort_elements = {}
        for sort in structure.sorts:
            if sort.name in sort_elements:
                errors.append(ValidationIssue("类别名称重复", f"sort {sort.name}"))
                continue
            if len(set(sort.elements)) != len(sort.elements):
                errors.append(ValidationIssue("类别内元素重复", f"sort {sort.name}"))
            if not sort.elements:
                warnings.append(ValidationIssue("空类别", f"sort {sort.name}"))
            sort_elements[sort.name] = set(sort.elements)

        # 2. 关系签名检查
        seen = set()
        for relation in structure.relations:
            where = f"relation {relation.name}"
            if relation.name in seen:
                errors.append(ValidationIssue("关系名称重复", where))
            seen.add(relation.name)
            if not relation.sort_type:
                errors.append(ValidationIssue("关系元数必须至少为1", where))
                continue
            unknown = [s for s in relation.sort_type if s not in sort_elements]
            if unknown:
                errors.append(ValidationIssue(f"未知类别 {unknown[0]}", where))
                continue

            # 3. 元组值域检查
            for index, row in enumerate(relation.tuples):
                if len(row) != len(relation.sort_type):
                    errors.append(ValidationIssue(
                        f"元组长度 {len(row)} 与元数 {len(relation.sort_type)} 不符",
                        f"{where}, tuple {index}"))
                    continue
                for k, (value, sort_name) in enumerate(zip(row, relation.sort_type)):
                    if value not in sort_elements[sort_name]:
                        errors.append(ValidationIssue(
                            f"元素 {value} 不属于类别 {sort_name}",
                            f"{where}, tuple {index}, position {k}"))

            # 4. 一致性检查
            if len(set(relation.tuples)) != len(relation.tuples):
                warnings.append(ValidationIssue("存在重复元组，将被去重", where))

        # 5. 常量标志检查
        if structure.constants_flag:
            names = {r.name: r for r in structure.relations}
            for sort in structure.sorts:
                for element in sort.elements:
                    name = f"c[{sort.name}:{element}]"
                    rel = names.get(name)
                    if rel is None or set(rel.tuples) != {(element,)}:
                        errors.append(ValidationIssue("声明含常量但缺少常量关系", name))

        for issue in warnings:
            logger.debug(f"结构警告: {issue.message} ({issue.location})")
        return ValidationResult(is_valid=not errors, errors=errors, warnings=warnings)
