"""码本：高斯混合分量均值矩阵 M 的初始化、查表与最近邻查询"""

import struct
from typing import List, Tuple, Union

import numpy as np
from sklearn.cluster import kmeans_plusplus

from gmvq.core import diffcore as dc
from gmvq.core.errors import DomainError, FormatError, NonFiniteError, ShapeError
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"GMVQ"
FORMAT_VERSION = 1
_SECTION_HEADER = struct.Struct("<4sIII")

DEGENERATE_JITTER = 1e-4


class Codebook:
    """C×L 码本，行向量 μ_c 同时服务于推断与生成"""

    def __init__(self, means, dtype=None):
        array = np.array(means.value if isinstance(means, dc.Node) else means, dtype=dtype or dc.DEFAULT_DTYPE)
        if array.ndim != 2:
            raise ShapeError(f"码本必须是 C×L 矩阵，实际形状: {array.shape}")
        if array.shape[0] < 2:
            raise DomainError(f"码本至少需要 2 个分量，实际: {array.shape[0]}")
        self.M = dc.tensor(array, requires_grad=True, name="codebook")

    @property
    def C(self) -> int:
        return self.M.shape[0]

    @property
    def L(self) -> int:
        return self.M.shape[1]

    def lookup(self, c_q) -> dc.Node:
        """z_c = c_qᵀ M；c_q 必须是精确 one-hot，梯度流向 M（以及 c_q 节点）"""
        c_q = dc.as_node(c_q, like=self.M)
        values = c_q.value
        if values.shape[-1] != self.C:
            raise ShapeError(f"one-hot 长度 {values.shape[-1]} 与码本大小 {self.C} 不一致")
        if not (np.all((values == 0) | (values == 1)) and np.all(values.sum(axis=-1) == 1)):
            raise DomainError("lookup 需要精确的 one-hot 向量")
        if c_q.ndim == 1:
            row = dc.matmul(dc.reshape(c_q, (1, self.C)), self.M)
            return dc.reshape(row, (self.L,))
        return dc.matmul(c_q, self.M)

    def squared_distances(self, zhat) -> np.ndarray:
        """||ẑ − μ_c||²，按分量逐项相减以保证平局精确"""
        z = np.asarray(zhat.value if isinstance(zhat, dc.Node) else zhat, dtype=self.M.dtype)
        if z.shape[-1] != self.L:
            raise ShapeError(f"潜变量维度 {z.shape[-1]} 与码本维度 {self.L} 不一致")
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("nearest 的输入包含非有限值")
        diff = z[..., None, :] - self.M.value
        return np.sum(diff * diff, axis=-1)

    def nearest(self, zhat) -> Union[int, np.ndarray]:
        """argmin_c ||ẑ − μ_c||，平局取最小下标"""
        index = np.argmin(self.squared_distances(zhat), axis=-1)
        return int(index) if np.ndim(index) == 0 else index

    def to_bytes(self) -> bytes:
        """检查点码本段：魔数、版本、C、L，随后行主序 float32 小端"""
        header = _SECTION_HEADER.pack(MAGIC, FORMAT_VERSION, self.C, self.L)
        return header + np.asarray(self.M.value, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, buffer: bytes, offset: int = 0, dtype=None) -> Tuple["Codebook", int]:
        """解析码本段，返回 (码本, 结束偏移)"""
        if len(buffer) - offset < _SECTION_HEADER.size:
            raise FormatError("码本段头部被截断")
        magic, version, C, L = _SECTION_HEADER.unpack_from(buffer, offset)
        if magic != MAGIC:
            raise FormatError(f"码本段魔数错误: {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"不支持的码本段版本: {version}")
        start = offset + _SECTION_HEADER.size
        end = start + 4 * C * L
        if len(buffer) < end:
            raise FormatError("码本数据被截断")
        means = np.frombuffer(buffer, dtype="<f4", count=C * L, offset=start).reshape(C, L)
        return cls(means.astype(dtype or dc.DEFAULT_DTYPE), dtype=dtype), end


def _pairwise_sq(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=-1)


def lloyd(points: np.ndarray, centroids: np.ndarray, iters: int) -> Tuple[np.ndarray, List[float]]:
    """Lloyd 迭代；返回质心与每轮结束时的目标值（平方距离和）

    空簇重新播种在离自身质心最远的点上（该点所在簇须多于一个成员）。
    """
    centroids = np.array(centroids, dtype=np.float64)
    C = centroids.shape[0]
    history: List[float] = []
    for _ in range(iters):
        dist = _pairwise_sq(points, centroids)
        assign = np.argmin(dist, axis=1)
        own = dist[np.arange(len(points)), assign]
        counts = np.bincount(assign, minlength=C)

        for empty in np.flatnonzero(counts == 0):
            movable = counts[assign] > 1
            if not np.any(movable & (own > 0)):
                break
            candidate = np.argmax(np.where(movable, own, -1.0))
            counts[assign[candidate]] -= 1
            assign[candidate] = empty
            counts[empty] = 1
            own[candidate] = 0.0
            centroids[empty] = points[candidate]

        for c in range(C):
            members = assign == c
            if np.any(members):
                centroids[c] = points[members].mean(axis=0)

        history.append(float(np.sum(_pairwise_sq(points, centroids)[np.arange(len(points)), assign])))
    return centroids, history


def kmeans_init(latents, C: int, iters: int = 10, seed: int = 0, dtype=None) -> Codebook:
    """k-means++ 播种 + Lloyd 迭代得到初始码本"""
    points = np.asarray(latents.value if isinstance(latents, dc.Node) else latents, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"k-means 输入必须是 N×L 矩阵，实际形状: {points.shape}")
    if points.shape[0] < C:
        raise DomainError(f"k-means 需要 N ≥ C，实际 N={points.shape[0]}, C={C}")
    if iters < 1:
        raise DomainError(f"Lloyd 迭代次数必须 ≥ 1: {iters}")

    rng = np.random.default_rng(seed)
    if np.all(points == points[0]):
        logger.warning("k-means 输入退化（所有点相同），以 1e-4 噪声抖动质心")
        jitter = DEGENERATE_JITTER * rng.standard_normal((C, points.shape[1]))
        return Codebook(points[0] + jitter, dtype=dtype)

    centers, _ = kmeans_plusplus(points, n_clusters=C, random_state=seed)
    centroids, history = lloyd(points, centers, iters)
    logger.debug(f"k-means 初始化完成: C={C}, 目标值 {history[0]:.6g} -> {history[-1]:.6g}")
    return Codebook(centroids, dtype=dtype)
