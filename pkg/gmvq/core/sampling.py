"""随机通路：Gumbel-Softmax 采样、连续重参数化、STE 量化与温度退火

所有随机数都来自显式传入的 numpy Generator，不使用全局随机状态。
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core.codebook import Codebook
from gmvq.core.errors import DomainError, ShapeError

GUMBEL_CLAMP = 1e-10


def sample_gumbel(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    """g = −log(−log u)，u 截断到 [1e-10, 1 − 1e-10]"""
    u = np.clip(rng.uniform(size=tuple(shape)), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


@dataclass(frozen=True)
class LatentNoise:
    """一步前向所需的全部随机数；固定它即可得到公共随机数（CRN）"""

    gumbel: np.ndarray
    eps: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, batch: int, num_components: int, latent_dim: int) -> "LatentNoise":
        return cls(
            gumbel=sample_gumbel(rng, (batch, num_components)),
            eps=rng.standard_normal((batch, latent_dim)),
        )


@dataclass(frozen=True)
class LatentSample:
    """采样得到的分量与连续潜变量"""

    index: np.ndarray
    c_q: dc.Node
    soft: dc.Node
    eps: np.ndarray
    sigma_c: dc.Node
    z: dc.Node
    codeword: dc.Node


def gumbel_softmax_sample(
    log_pi,
    tau: float,
    rng: Optional[np.random.Generator] = None,
    gumbel: Optional[np.ndarray] = None,
    hard: bool = True,
) -> Tuple[dc.Node, dc.Node]:
    """返回 (soft, c_q)

    soft = softmax((log π + g)/τ)；hard 模式下 c_q 前向为 argmax 处的 one-hot，
    反向把梯度原样传给 soft。
    """
    if tau <= 0:
        raise DomainError(f"温度必须为正: {tau}")
    log_pi = dc.as_node(log_pi)
    if gumbel is None:
        if rng is None:
            raise ValueError("需要 rng 或预先抽取的 Gumbel 噪声")
        gumbel = sample_gumbel(rng, log_pi.shape)
    gumbel = np.asarray(gumbel, dtype=log_pi.dtype)
    if gumbel.shape != log_pi.shape:
        raise ShapeError(f"Gumbel 噪声形状 {gumbel.shape} 与 log π 形状 {log_pi.shape} 不一致")

    soft = dc.softmax_lastdim(dc.scale(dc.add(log_pi, gumbel), 1.0 / tau))
    if not hard:
        return soft, soft
    index = np.argmax(soft.value, axis=-1)
    c_q = dc.straight_through(dc.one_hot(index, soft.shape[-1], dtype=soft.dtype), soft)
    return soft, c_q


def _is_one_hot(values: np.ndarray) -> bool:
    return bool(np.all((values == 0) | (values == 1)) and np.all(values.sum(axis=-1) == 1))


def select_codeword(c_q, codebook: Codebook) -> dc.Node:
    """c_qᵀM；非 one-hot（soft 通路）时按权重混合码字"""
    c_q = dc.as_node(c_q, like=codebook.M)
    if _is_one_hot(c_q.value):
        return codebook.lookup(c_q)
    if c_q.ndim == 1:
        return dc.reshape(dc.matmul(dc.reshape(c_q, (1, codebook.C)), codebook.M), (codebook.L,))
    return dc.matmul(c_q, codebook.M)


def selected_sigma(c_q, sigma2_c) -> dc.Node:
    """σ_c(x) = sqrt(Σ_c c_q[c]·σ_c²(x))"""
    return dc.sqrt(dc.sum(dc.mul(c_q, sigma2_c), axis=-1))


def reparameterize_z(c_q, codebook: Codebook, sigma_c, eps) -> dc.Node:
    """z = c_qᵀM + σ_c ⊙ ε（各向同性 σ 广播到 L 维）"""
    sigma_c = dc.as_node(sigma_c, like=codebook.M)
    if np.any(sigma_c.value < 0):
        raise DomainError("σ_c 不能为负")
    eps = np.asarray(eps, dtype=codebook.M.dtype)
    if eps.shape[-1] != codebook.L:
        raise ShapeError(f"ε 维度 {eps.shape[-1]} 与潜变量维度 {codebook.L} 不一致")
    codeword = select_codeword(c_q, codebook)
    if sigma_c.ndim == 1:
        sigma_c = dc.reshape(sigma_c, (sigma_c.shape[0], 1))
    return dc.add(codeword, dc.mul(sigma_c, eps))


def sample_latent(
    log_pi: dc.Node,
    sigma2_c: dc.Node,
    codebook: Codebook,
    tau: float,
    noise: LatentNoise,
    hard: bool = True,
) -> LatentSample:
    """Gumbel 选择分量，再按该分量的方差重参数化 z"""
    soft, c_q = gumbel_softmax_sample(log_pi, tau, gumbel=noise.gumbel, hard=hard)
    sigma_c = selected_sigma(c_q, sigma2_c)
    codeword = select_codeword(c_q, codebook)
    s = dc.reshape(sigma_c, (sigma_c.shape[0], 1)) if sigma_c.ndim == 1 else sigma_c
    z = dc.add(codeword, dc.mul(s, np.asarray(noise.eps, dtype=codebook.M.dtype)))
    return LatentSample(
        index=np.argmax(c_q.value, axis=-1),
        c_q=c_q,
        soft=soft,
        eps=noise.eps,
        sigma_c=sigma_c,
        z=z,
        codeword=codeword,
    )


def ste_quantize(zhat, codebook: Codebook) -> Tuple[dc.Node, Union[int, np.ndarray]]:
    """前向取最近码字，反向 ∂z_c/∂ẑ = I"""
    zhat = dc.as_node(zhat, like=codebook.M)
    index = codebook.nearest(zhat)
    return dc.straight_through(codebook.M.value[index], zhat), index


def deterministic_latent(pi, codebook: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    """评估模式：argmax π 选分量，z = μ_c，不加噪声"""
    probs = np.asarray(pi.value if isinstance(pi, dc.Node) else pi)
    index = np.argmax(probs, axis=-1)
    return index, np.array(codebook.M.value[index])


@dataclass(frozen=True)
class TemperatureSchedule:
    """τ(t) = max(τ_end, τ_start·exp(−r t))，在 decay_fraction·total_steps 处到达 τ_end"""

    total_steps: int
    tau_start: float = 2.0
    tau_end: float = 0.1
    decay_fraction: float = 0.8

    @property
    def anneal_steps(self) -> float:
        return self.decay_fraction * self.total_steps

    @property
    def rate(self) -> float:
        if self.anneal_steps <= 0:
            return 0.0
        return math.log(self.tau_start / self.tau_end) / self.anneal_steps

    def __call__(self, step: int) -> float:
        if step < 0:
            raise DomainError(f"步数不能为负: {step}")
        if self.anneal_steps <= 0:
            return self.tau_start
        if step >= self.anneal_steps:
            return self.tau_end
        tau = self.tau_start * math.exp(-self.rate * step)
        return min(self.tau_start, max(self.tau_end, tau))


def temperature(step: int, total_steps: int, tau_start: float = 2.0, tau_end: float = 0.1) -> float:
    return TemperatureSchedule(total_steps, tau_start, tau_end)(step)
