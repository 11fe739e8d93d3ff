"""
异常类型

所有错误都继承自 ModcspError，命令行据此区分输入错误和预算耗尽。
"""
from typing import Optional


class ModcspError(Exception):
    """库内所有异常的基类"""


class StructureError(ModcspError, ValueError):
    """结构、实例或输入文件不合法，附带出错位置"""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        text = f"{message} (位置: {location})" if location else message
        super().__init__(text)


class ModulusError(ModcspError, ValueError):
    """模数不是素数"""

    def __init__(self, p):
        self.modulus = p
        super().__init__(f"模数必须为素数, 实际为 {p}")


class GuardExceeded(ModcspError, RuntimeError):
    """枚举规模超出保护阈值"""

    def __init__(self, guard: str, value, limit):
        self.guard = guard
        self.value = value
        self.limit = limit
        super().__init__(f"{guard} 超出保护阈值: {value} > {limit}")


class PreconditionError(ModcspError, ValueError):
    """操作的前置条件不满足"""


class TermError(ModcspError, ValueError):
    """项解析或求值失败"""
