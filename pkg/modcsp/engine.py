"""
回溯搜索引擎

所有同态计数、多态枚举、公式求值和置换域求解都共用这一个引擎。
变量按给定顺序赋值；每个约束在其作用域中最后一个变量被赋值时检查前缀投影。
"""
import logging
from collections import defaultdict
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)


class SearchSpace:
    """
    下标形式的约束满足问题

    Args:
        domains: 每个变量的候选值（整数下标），按尝试顺序排列
        constraints: (作用域变量下标, 允许元组集合) 列表
        alldiff_groups: 变量到分组编号的映射，同组变量取值两两不同
        order: 搜索顺序（变量下标排列），默认即给定顺序
    """

    def __init__(self, domains: Sequence[Sequence[int]],
                 constraints: Sequence[Tuple[Sequence[int], FrozenSet[Tuple[int, ...]]]],
                 alldiff_groups: Optional[Dict[int, int]] = None,
                 order: Optional[Sequence[int]] = None):
        n = len(domains)
        self.size = n
        self.order = list(order) if order is not None else list(range(n))
        if sorted(self.order) != list(range(n)):
            raise ValueError("搜索顺序必须是变量下标的排列")
        rank = {v: k for k, v in enumerate(self.order)}
        self.domains = [list(domains[v]) for v in self.order]
        groups = alldiff_groups or {}
        self.groups = [groups.get(v) for v in self.order]

        # 每个搜索层上的检查：(作用域在搜索层中的位置, 允许的前缀投影)
        self.checks: List[List[Tuple[Tuple[int, ...], set]]] = [[] for _ in range(n)]
        for scope, allowed in constraints:
            ranked = [rank[v] for v in scope]
            for level in sorted(set(ranked)):
                positions = tuple(i for i, r in enumerate(ranked) if r <= level)
                projection = {tuple(t[i] for i in positions) for t in allowed}
                self.checks[level].append((tuple(ranked[i] for i in positions), projection))

        # suffix_free[k]: 第 k 层及之后没有任何检查或分组
        self.suffix_free = [False] * (n + 1)
        self.suffix_product = [1] * (n + 1)
        self.suffix_free[n] = True
        for k in range(n - 1, -1, -1):
            self.suffix_free[k] = self.suffix_free[k + 1] and not self.checks[k] and self.groups[k] is None
            self.suffix_product[k] = self.suffix_product[k + 1] * len(self.domains[k])

    def _consistent(self, level: int, values: List[int]) -> bool:
        for positions, allowed in self.checks[level]:
            if tuple(values[i] for i in positions) not in allowed:
                return False
        return True

    def iter_solutions(self) -> Iterator[Tuple[int, ...]]:
        """按搜索顺序的字典序给出解，结果按原变量下标排列"""
        n = self.size
        values = [0] * n
        used: Dict[int, set] = defaultdict(set)
        order = self.order

        def emit() -> Tuple[int, ...]:
            out = [0] * n
            for level, v in enumerate(order):
                out[v] = values[level]
            return tuple(out)

        def rec(level: int) -> Iterator[Tuple[int, ...]]:
            if level == n:
                yield emit()
                return
            group = self.groups[level]
            for value in self.domains[level]:
                if group is not None and value in used[group]:
                    continue
                values[level] = value
                if not self._consistent(level, values):
                    continue
                if group is not None:
                    used[group].add(value)
                yield from rec(level + 1)
                if group is not None:
                    used[group].discard(value)

        yield from rec(0)

    def count(self) -> int:
        """精确计数；无约束的后缀直接按定义域大小相乘"""
        n = self.size
        values = [0] * n
        used: Dict[int, set] = defaultdict(set)

        def rec(level: int) -> int:
            if self.suffix_free[level]:
                return self.suffix_product[level]
            group = self.groups[level]
            total = 0
            for value in self.domains[level]:
                if group is not None and value in used[group]:
                    continue
                values[level] = value
                if not self._consistent(level, values):
                    continue
                if group is not None:
                    used[group].add(value)
                total += rec(level + 1)
                if group is not None:
                    used[group].discard(value)
            return total

        return rec(0)
