"""检查点读写

布局（小端）：
  magic "GMVQ" | u32 版本 | u32 配置 JSON 长度 | 配置 JSON
  码本段（见 Codebook.to_bytes）
  u32 层参数块数，每块：u32 名称长度 | 名称 | u32 ndim | ndim × u32 形状 | float32 行主序数据
写入先落到同目录临时文件再 os.replace，保证原子性。
"""

import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from pydantic import ValidationError

from gmvq.core.codebook import MAGIC, Codebook
from gmvq.core.errors import FormatError
from gmvq.core.networks import GMVQModel, build_model
from gmvq.models.training import ModelConfig
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")
_PREAMBLE = struct.Struct("<4sII")


def _read_u32(buffer: bytes, offset: int) -> Tuple[int, int]:
    if len(buffer) - offset < _U32.size:
        raise FormatError("检查点被截断")
    return _U32.unpack_from(buffer, offset)[0], offset + _U32.size


def checkpoint_to_bytes(model: GMVQModel) -> bytes:
    config_json = model.config.model_dump_json().encode("utf-8")
    parts = [_PREAMBLE.pack(MAGIC, CHECKPOINT_VERSION, len(config_json)), config_json, model.codebook.to_bytes()]

    layers = [p for p in model.parameters() if p is not model.codebook.M]
    parts.append(_U32.pack(len(layers)))
    for param in layers:
        name = param.name.encode("utf-8")
        parts.append(_U32.pack(len(name)) + name)
        parts.append(_U32.pack(param.ndim) + b"".join(_U32.pack(s) for s in param.shape))
        parts.append(np.asarray(param.value, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(buffer: bytes) -> GMVQModel:
    if len(buffer) < _PREAMBLE.size:
        raise FormatError("检查点头部被截断")
    magic, version, config_len = _PREAMBLE.unpack_from(buffer, 0)
    if magic != MAGIC:
        raise FormatError(f"检查点魔数错误: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"不支持的检查点版本: {version}")
    offset = _PREAMBLE.size
    if len(buffer) < offset + config_len:
        raise FormatError("配置段被截断")
    try:
        config = ModelConfig.model_validate_json(buffer[offset:offset + config_len])
    except ValidationError as e:
        raise FormatError(f"检查点中的配置无效: {e}") from e
    offset += config_len

    model = build_model(config)
    codebook, offset = Codebook.from_bytes(buffer, offset, dtype=np.dtype(config.dtype))
    state: Dict[str, np.ndarray] = {"codebook": np.array(codebook.M.value)}

    count, offset = _read_u32(buffer, offset)
    for _ in range(count):
        name_len, offset = _read_u32(buffer, offset)
        name = buffer[offset:offset + name_len].decode("utf-8")
        offset += name_len
        ndim, offset = _read_u32(buffer, offset)
        shape = []
        for _ in range(ndim):
            size, offset = _read_u32(buffer, offset)
            shape.append(size)
        n_values = int(np.prod(shape)) if shape else 1
        if len(buffer) < offset + 4 * n_values:
            raise FormatError(f"参数块 {name} 被截断")
        state[name] = np.frombuffer(buffer, dtype="<f4", count=n_values, offset=offset).reshape(shape)
        offset += 4 * n_values
    if offset != len(buffer):
        raise FormatError(f"检查点尾部有 {len(buffer) - offset} 个多余字节")

    expected = {name: p.shape for name, p in model.named_parameters().items()}
    for name, array in state.items():
        if name not in expected:
            raise FormatError(f"检查点包含未知参数: {name}")
        if tuple(array.shape) != tuple(expected[name]):
            raise FormatError(f"参数 {name} 形状 {array.shape} 与配置推出的 {expected[name]} 不一致")
    model.load_state_dict(state)
    return model


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def save_checkpoint(model: GMVQModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    _atomic_write(path, checkpoint_to_bytes(model))
    return path


def load_checkpoint(path: Union[str, Path]) -> GMVQModel:
    path = Path(path)
    model = checkpoint_from_bytes(path.read_bytes())
    logger.debug(f"读取检查点: {path} (quantizer={model.config.quantizer})")
    return model
