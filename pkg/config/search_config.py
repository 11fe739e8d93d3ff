"""
搜索预算配置模块

定义闭包搜索、小工具搜索等有界搜索的默认预算和日志参数
"""

import os
from typing import Dict, Any


class SearchConfig:
    """搜索预算配置类"""

    # 闭包搜索预算（原子数、自由变量数、量词块深度、关系大小、候选关系总数）
    CLOSURE_BUDGET = {
        'max_atoms': int(os.getenv('MODCSP_CLOSURE_MAX_ATOMS', 4)),
        'max_free_arity': int(os.getenv('MODCSP_CLOSURE_MAX_ARITY', 3)),
        'max_depth': int(os.getenv('MODCSP_CLOSURE_MAX_DEPTH', 2)),
        'max_size': int(os.getenv('MODCSP_CLOSURE_MAX_SIZE', 4096)),
        'max_relations': int(os.getenv('MODCSP_CLOSURE_MAX_RELATIONS', 500)),
    }

    # 小工具搜索预算
    GADGET_BUDGET = {
        'max_vertices': int(os.getenv('MODCSP_GADGET_MAX_VERTICES', 6)),
        'max_atoms': int(os.getenv('MODCSP_GADGET_MAX_ATOMS', 10)),
        'max_candidates': int(os.getenv('MODCSP_GADGET_MAX_CANDIDATES', 20000)),
        'chunk_size': 256,
    }

    # 案例表校验
    CASE_TABLES = {
        'clone_size_limit': 5000,  # 二元克隆闭包的最大规模
        'include_mirrors': True,
    }

    # 日志配置
    LOG_CONFIG = {
        'level': os.getenv('MODCSP_LOG_LEVEL', 'INFO'),
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'datefmt': '%Y-%m-%d %H:%M:%S',
        'file_prefix': 'modcsp',
    }

    @classmethod
    def merged_budget(cls, name: str, overrides: Dict[str, Any] = None) -> Dict[str, Any]:
        """返回合并了覆盖项的预算副本"""
        template = cls.CLOSURE_BUDGET if name == 'closure' else cls.GADGET_BUDGET
        budget = dict(template)
        for key, value in (overrides or {}).items():
            if value is not None and key in budget:
                budget[key] = int(value)
        return budget

    @classmethod
    def get_log_file_path(cls, log_dir: str, suffix: str = '') -> str:
        """获取日志文件路径"""
        os.makedirs(log_dir, exist_ok=True)
        name = cls.LOG_CONFIG['file_prefix'] + (f"_{suffix}" if suffix else '') + '.log'
        return os.path.join(log_dir, name)


# 全局配置实例
search_config = SearchConfig()
