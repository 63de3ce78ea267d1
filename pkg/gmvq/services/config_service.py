"""运行配置文件解析

格式为扁平的 `key = value` 文本，`#` 开始注释，键即 ModelConfig 字段名。
"""

from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from gmvq.core.errors import ConfigError
from gmvq.models.training import ModelConfig
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)


def parse_config_text(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"第 {lineno} 行缺少 '=': {raw.strip()}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"第 {lineno} 行缺少键名")
        if key in values:
            raise ConfigError(f"第 {lineno} 行重复的键: {key}")
        values[key] = value
    return values


def build_config(values: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ModelConfig:
    """合并覆盖项并校验；未知键与非法取值都报 ConfigError"""
    merged = dict(values)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ModelConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"配置无效: {problems}") from e


def load_model_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ModelConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
    config = build_config(parse_config_text(text), overrides)
    logger.debug(f"加载配置: {path}")
    return config


def dump_config_text(config: ModelConfig) -> str:
    """ModelConfig 写回 key = value 文本（可被 load_model_config 读回）"""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
