"""合成数据集生成与数据集文件读写

文件格式：头部 (N u32, D u32)，随后 N·D 个小端 float32（行主序），可选 N 个 u32 标签。
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from gmvq.core.errors import DomainError, FormatError, ShapeError
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)

_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class Dataset:
    """N×D 数据矩阵与可选的真实分量标签"""

    data: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError(f"数据必须是 N×D 矩阵，实际形状: {self.data.shape}")
        if self.labels is not None and self.labels.shape != (self.data.shape[0],):
            raise ShapeError(f"标签形状 {self.labels.shape} 与样本数 {self.data.shape[0]} 不一致")

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.size


def make_synthetic_dataset(
    clusters: int,
    dim: int,
    n: int,
    spread: float = 0.1,
    seed: int = 0,
    radius: Optional[float] = None,
) -> Dataset:
    """K 分量各向同性高斯混合，均值取在半径为 radius（默认 √D）的球面上，混合权重均匀

    标签按 0..K−1 轮转后打乱，保证每个分量都出现。
    """
    if clusters < 2:
        raise DomainError(f"分量数 K 必须 ≥ 2: {clusters}")
    if dim < 1:
        raise DomainError(f"维度 D 必须为正: {dim}")
    if n < clusters:
        raise DomainError(f"样本数 N 必须 ≥ K: N={n}, K={clusters}")
    if spread < 0:
        raise DomainError(f"spread 不能为负: {spread}")

    rng = np.random.default_rng(seed)
    radius = float(np.sqrt(dim)) if radius is None else radius
    directions = rng.standard_normal((clusters, dim))
    means = radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)

    labels = rng.permutation(np.arange(n) % clusters)
    data = means[labels] + spread * rng.standard_normal((n, dim))
    logger.debug(f"生成合成数据集: K={clusters} D={dim} N={n} spread={spread} seed={seed}")
    return Dataset(data=data, labels=labels.astype(np.int64))


def dataset_to_bytes(dataset: Dataset) -> bytes:
    parts = [
        _HEADER.pack(dataset.size, dataset.dim),
        np.asarray(dataset.data, dtype="<f4").tobytes(),
    ]
    if dataset.labels is not None:
        parts.append(np.asarray(dataset.labels, dtype="<u4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buffer: bytes) -> Dataset:
    if len(buffer) < _HEADER.size:
        raise FormatError("数据集头部被截断")
    n, dim = _HEADER.unpack_from(buffer, 0)
    data_bytes = 4 * n * dim
    end = _HEADER.size + data_bytes
    if len(buffer) < end:
        raise FormatError(f"数据区被截断: 需要 {data_bytes} 字节")
    data = np.frombuffer(buffer, dtype="<f4", count=n * dim, offset=_HEADER.size).reshape(n, dim)

    remaining = len(buffer) - end
    if remaining == 0:
        labels = None
    elif remaining == 4 * n:
        labels = np.frombuffer(buffer, dtype="<u4", count=n, offset=end).astype(np.int64)
    else:
        raise FormatError(f"数据集尾部有 {remaining} 个无法识别的字节")
    return Dataset(data=data.astype(np.float64), labels=labels)


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(dataset_to_bytes(dataset))
    logger.info(f"数据集已写入: {path} (N={dataset.size}, D={dataset.dim})")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    dataset = dataset_from_bytes(path.read_bytes())
    logger.debug(f"读取数据集: {path} (N={dataset.size}, D={dataset.dim})")
    return dataset
