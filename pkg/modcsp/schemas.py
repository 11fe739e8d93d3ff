"""
输入文件模式

命令行读入的结构、实例、公式、矩阵、有向图和证书先经过 pydantic 校验，
出错时统一转成带文件位置的 StructureError。
"""
import json
import logging
from typing import Any, List, Optional, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator
from sympy import isprime

from modcsp.exceptions import StructureError
from modcsp.structures import (
    Constraint, CspInstance, MultiSortedStructure, Relation, Sort, validate, validate_instance,
)

logger = logging.getLogger(__name__)

Model = TypeVar("Model", bound=BaseModel)


def _as_text(value: Any) -> Any:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, list):
        return [_as_text(v) for v in value]
    return value


class SortModel(BaseModel):
    name: str
    elements: List[str]

    @field_validator("name", "elements", mode="before")
    @classmethod
    def coerce_text(cls, value: Any) -> Any:
        return _as_text(value)


class RelationModel(BaseModel):
    name: str
    type: List[str] = Field(min_length=1)
    tuples: List[List[str]] = Field(default_factory=list)

    @field_validator("type", "tuples", mode="before")
    @classmethod
    def coerce_text(cls, value: Any) -> Any:
        return _as_text(value)


class StructureFile(BaseModel):
    sorts: List[SortModel]
    relations: List[RelationModel] = Field(default_factory=list)
    constants: bool = False

    def to_structure(self) -> MultiSortedStructure:
        sorts = [Sort(s.name, tuple(s.elements)) for s in self.sorts]
        relations = [Relation(r.name, tuple(r.type), tuple(tuple(t) for t in r.tuples)) for r in self.relations]
        return validate(MultiSortedStructure.create(sorts, relations, self.constants, check=False))


class VariableModel(BaseModel):
    name: str
    sort: str

    @field_validator("name", "sort", mode="before")
    @classmethod
    def coerce_text(cls, value: Any) -> Any:
        return _as_text(value)


class ConstraintModel(BaseModel):
    relation: str
    scope: List[str]

    @field_validator("scope", mode="before")
    @classmethod
    def coerce_text(cls, value: Any) -> Any:
        return _as_text(value)


class InstanceFile(BaseModel):
    variables: List[VariableModel]
    constraints: List[ConstraintModel] = Field(default_factory=list)

    def to_instance(self, structure: Optional[MultiSortedStructure] = None) -> CspInstance:
        instance = CspInstance(tuple((v.name, v.sort) for v in self.variables),
                               tuple(Constraint(c.relation, tuple(c.scope)) for c in self.constraints))
        return validate_instance(instance, structure) if structure is not None else instance


class MatrixFile(BaseModel):
    p: int
    rows: List[List[int]]

    @field_validator("p")
    @classmethod
    def check_prime(cls, value: int) -> int:
        if not isprime(value):
            raise ValueError(f"模数必须为素数: {value}")
        return value


class GraphFile(BaseModel):
    n: int = Field(ge=0)
    edges: List[List[int]] = Field(default_factory=list)

    @field_validator("edges")
    @classmethod
    def check_pairs(cls, value: List[List[int]]) -> List[List[int]]:
        for edge in value:
            if len(edge) != 2:
                raise ValueError("每条边必须是 [u, v]")
        return value


class RunConfig(BaseModel):
    """一次命令行运行的配置"""
    command: str
    modulus: Optional[int] = None
    seed: int = 42
    output: Optional[str] = None
    n_jobs: int = Field(default=1, ge=-1)
    budget_atoms: Optional[int] = Field(default=None, gt=0)
    budget_arity: Optional[int] = Field(default=None, gt=0)
    budget_depth: Optional[int] = Field(default=None, ge=0)
    budget_relations: Optional[int] = Field(default=None, gt=0)
    gadget_vertices: Optional[int] = Field(default=None, gt=0)

    @field_validator("modulus")
    @classmethod
    def check_prime(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and not isprime(value):
            raise ValueError(f"模数必须为素数: {value}")
        return value

    def closure_overrides(self) -> dict:
        return {"max_atoms": self.budget_atoms, "max_free_arity": self.budget_arity,
                "max_depth": self.budget_depth, "max_relations": self.budget_relations}

    def gadget_overrides(self) -> dict:
        return {"max_vertices": self.gadget_vertices}


def _location(path: str, error: dict) -> str:
    return f"{path}:" + ".".join(str(part) for part in error.get("loc", ()))


def parse_model(model: Type[Model], payload: Any, path: str = "<input>") -> Model:
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise StructureError(first.get("msg", "格式错误"), _location(path, first)) from None


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise StructureError("文件不存在", path) from None
    except json.JSONDecodeError as exc:
        raise StructureError(f"JSON 格式错误: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None


def load_file(model: Type[Model], path: str) -> Model:
    return parse_model(model, read_json(path), path)
