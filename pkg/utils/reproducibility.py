"""
可重现性保证模块 - 确保随机实例生成和搜索顺序在不同运行中一致
"""
import hashlib
import logging
import random

import numpy as np

logger = logging.getLogger(__name__)


def set_deterministic_seeds(seed: int = 42) -> None:
    """
    设置所有随机种子以确保可重现性

    Args:
        seed (int): 随机种子值，默认42
    """
    # 1. Python内置random模块
    random.seed(seed)

    # 2. NumPy随机种子
    np.random.seed(seed)

    logger.debug(f"随机种子设置完成: {seed}")


def generate_case_seed(case: str, base_seed: int = 42) -> int:
    """
    为不同测试用例生成特定的随机种子

    Args:
        case (str): 用例名称
        base_seed (int): 基础种子值

    Returns:
        int: 用例特定的种子值
    """
    combined_str = f"{case}_{base_seed}"
    hash_object = hashlib.md5(combined_str.encode())
    return int(hash_object.hexdigest()[:8], 16) % (2**31 - 1)


def make_rng(case: str, base_seed: int = 42) -> np.random.Generator:
    """返回用例专用的 numpy 随机数生成器"""
    return np.random.default_rng(generate_case_seed(case, base_seed))


class ReproducibilityContext:
    """可重现性上下文管理器"""

    def __init__(self, case: str, base_seed: int = 42):
        self.case = case
        self.base_seed = base_seed
        self.original_python_state = None
        self.original_numpy_state = None

    def __enter__(self):
        """进入上下文时设置用例种子"""
        self.original_python_state = random.getstate()
        self.original_numpy_state = np.random.get_state()
        set_deterministic_seeds(generate_case_seed(self.case, self.base_seed))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """退出上下文时恢复原始状态"""
        if self.original_python_state:
            random.setstate(self.original_python_state)
        if self.original_numpy_state:
            np.random.set_state(self.original_numpy_state)
