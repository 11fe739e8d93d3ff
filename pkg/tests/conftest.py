import os
import sys

import pytest

# 添加项目根目录到路径
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from modcsp.mpp import ClosureBudget  # noqa: E402


@pytest.fixture
def small_budget():
    """测试用的小闭包预算"""
    return ClosureBudget(max_atoms=2, max_free_arity=2, max_depth=1, max_size=4096, max_relations=60)


@pytest.fixture
def seed(request):
    return int(os.getenv("MODCSP_SEED", 42))
