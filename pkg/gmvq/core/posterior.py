"""变分类别后验 q(c|x) 与分量方差

θ 表示编码器参数、φ 表示解码器参数。
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import softmax

from gmvq.core import diffcore as dc
from gmvq.core.codebook import Codebook
from gmvq.core.errors import DomainError, ShapeError


@dataclass(frozen=True)
class PosteriorBundle:
    """单个输入（或一个 batch）的后验量"""

    zhat: dc.Node
    what: dc.Node
    logits: dc.Node
    pi: dc.Node
    sigma2_c: dc.Node


def split_heads(head, latent_dim: int) -> Tuple[dc.Node, dc.Node]:
    """2L 宽的编码器输出拆成 ẑ 与 ŵ = ζ(r̂)"""
    head = dc.as_node(head)
    if head.shape[-1] != 2 * latent_dim:
        raise ShapeError(f"编码器输出宽度应为 {2 * latent_dim}，实际 {head.shape[-1]}")
    zhat = dc.slice_lastdim(head, 0, latent_dim)
    what = dc.softplus(dc.slice_lastdim(head, latent_dim, 2 * latent_dim))
    return zhat, what


def encoder_heads(x, encoder, latent_dim: int) -> Tuple[dc.Node, dc.Node]:
    return split_heads(encoder(x), latent_dim)


def _differences(zhat, codebook: Codebook) -> Tuple[dc.Node, bool]:
    zhat = dc.as_node(zhat, like=codebook.M)
    if zhat.shape[-1] != codebook.L:
        raise ShapeError(f"ẑ 维度 {zhat.shape[-1]} 与码本维度 {codebook.L} 不一致")
    single = zhat.ndim == 1
    batch = 1 if single else zhat.shape[0]
    z = dc.reshape(zhat, (batch, 1, codebook.L))
    m = dc.reshape(codebook.M, (1, codebook.C, codebook.L))
    return dc.sub(z, m), single


def _squeeze(node: dc.Node, single: bool) -> dc.Node:
    return dc.reshape(node, node.shape[1:]) if single else node


def squared_distances(zhat, codebook: Codebook) -> dc.Node:
    """可微的 ||ẑ − μ_c||²，形状 (..., C)"""
    diff, single = _differences(zhat, codebook)
    return _squeeze(dc.sum(dc.square(diff), axis=-1), single)


def gm_logits(zhat, what, codebook: Codebook) -> dc.Node:
    """l_c = −½ Σ_i ŵ_i (ẑ_i − μ_{c,i})²"""
    diff, single = _differences(zhat, codebook)
    what = dc.as_node(what, like=codebook.M)
    if what.shape != dc.as_node(zhat).shape:
        raise ShapeError(f"ŵ 形状 {what.shape} 与 ẑ 形状不一致")
    if np.any(what.value <= 0):
        raise DomainError("ŵ 必须严格为正")
    w = dc.reshape(what, (diff.shape[0], 1, codebook.L))
    weighted = dc.sum(dc.mul(dc.square(diff), w), axis=-1)
    return _squeeze(dc.scale(weighted, -0.5), single)


def categorical_posterior(logits) -> dc.Node:
    """π(x) = softmax(l(x))"""
    return dc.softmax_lastdim(dc.as_node(logits))


def log_posterior(logits) -> dc.Node:
    return dc.log_softmax_lastdim(dc.as_node(logits))


def component_variance(zhat, codebook: Codebook, sigma2: float) -> dc.Node:
    """σ_c²(x) = (||ẑ − μ_c||² / L) / (2σ²)"""
    if sigma2 <= 0:
        raise DomainError(f"σ² 必须为正: {sigma2}")
    return dc.scale(squared_distances(zhat, codebook), 1.0 / (codebook.L * 2.0 * sigma2))


def stochastic_vq_logits(zhat, codebook: Codebook, sigma2: float) -> dc.Node:
    """−||ẑ − μ_c||² / (2σ²)"""
    if sigma2 <= 0:
        raise DomainError(f"σ² 必须为正: {sigma2}")
    return dc.scale(squared_distances(zhat, codebook), -1.0 / (2.0 * sigma2))


def stochastic_vq_posterior(zhat, codebook: Codebook, sigma2: float) -> dc.Node:
    """随机 VQ 基线：与负平方距离成正比的 softmax"""
    return dc.softmax_lastdim(stochastic_vq_logits(zhat, codebook, sigma2))


def posterior_bundle(x, model) -> PosteriorBundle:
    zhat, what = encoder_heads(x, model.encoder, model.config.latent_dim)
    logits = gm_logits(zhat, what, model.codebook)
    return PosteriorBundle(
        zhat=zhat,
        what=what,
        logits=logits,
        pi=categorical_posterior(logits),
        sigma2_c=component_variance(zhat, model.codebook, model.config.sigma_z2),
    )


def softplus_inverse(y) -> np.ndarray:
    """ζ⁻¹(y) = y + log(1 − e^{−y})，要求 y > 0"""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("softplus 的值域为正数")
    return y + np.log(-np.expm1(-y))


def mean_max_posterior(distances: np.ndarray, precision: float) -> float:
    """ŵ ≡ precision 时 batch 上 max_c π_c 的平均"""
    return float(np.mean(np.max(softmax(-0.5 * precision * distances, axis=-1), axis=-1)))


def calibrate_precision(zhat, codebook: Codebook, target: float) -> float:
    """求各向同性精度 w，使 ŵ ≡ w 时 batch 上 max π 的均值等于 target

    max π 随 w 单调不减，w → 0 时为 1/C，因此在 log w 上用 brentq。
    """
    if not 1.0 / codebook.C < target < 1.0:
        raise DomainError(f"目标置信度必须在 (1/C, 1) 内: {target}")
    distances = codebook.squared_distances(zhat).astype(np.float64)
    distances = distances - distances.min(axis=-1, keepdims=True)
    positive = distances[distances > 0]
    if positive.size == 0:
        raise DomainError("ẑ 到所有码字距离相同，无法校准 ŵ")
    scale = float(np.median(positive))
    lo, hi = math.log(1e-6 / scale), math.log(1e6 / scale)
    if mean_max_posterior(distances, math.exp(hi)) < target:
        raise DomainError(f"ŵ 在搜索区间内达不到目标置信度 {target}")
    log_w = brentq(lambda s: mean_max_posterior(distances, math.exp(s)) - target, lo, hi, xtol=1e-10)
    return math.exp(log_w)


def init_precision_head(encoder, latent_dim: int, precision: float) -> None:
    """r̂ 头的权重置零、偏置设为 ζ⁻¹(precision)，使初始 ŵ ≡ precision"""
    head = encoder.layers[-1]
    if head.bias.shape[-1] != 2 * latent_dim:
        raise ShapeError(f"编码器输出宽度应为 {2 * latent_dim}，实际 {head.bias.shape[-1]}")
    weight = np.array(head.weight.value)
    bias = np.array(head.bias.value)
    weight[:, latent_dim:] = 0.0
    bias[latent_dim:] = softplus_inverse(precision)
    head.weight.assign(weight)
    head.bias.assign(bias)
