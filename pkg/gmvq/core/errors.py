"""异常类型"""

from typing import Any, Dict, Optional


class GMVQError(Exception):
    """所有 GM-VQ 异常的基类"""


class ShapeError(GMVQError, ValueError):
    """张量形状不匹配"""


class DomainError(GMVQError, ValueError):
    """输入超出运算定义域（如 log 非正输入、非正温度）"""


class NonFiniteError(GMVQError, ArithmeticError):
    """运算产生 NaN 或 Inf"""


class ConfigError(GMVQError, ValueError):
    """配置文件格式错误或包含未知键"""


class FormatError(GMVQError, ValueError):
    """二进制文件格式错误（魔数、版本、截断）"""


class DivergenceError(GMVQError, RuntimeError):
    """训练发散：损失非有限"""

    def __init__(self, message: str, step: int, last_good_state: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.step = step
        self.last_good_state = last_good_state
