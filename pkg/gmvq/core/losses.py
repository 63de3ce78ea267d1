"""训练目标：GM-VQ（ALBO）损失、聚合后验、KL，以及 VQ-VAE / 随机 VQ 基线与互信息熵正则

熵与 KL 内部一律用 nats；困惑度按定义 2^H 使用以 2 为底的熵。
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import entropy as scipy_entropy

from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.codebook import Codebook
from gmvq.core.errors import DomainError, ShapeError
from gmvq.core.sampling import (
    LatentNoise,
    LatentSample,
    gumbel_softmax_sample,
    sample_latent,
    select_codeword,
    ste_quantize,
)

LOG_CLAMP = 1e-12
PROB_TOLERANCE = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    """损失分解；GM-VQ 下 total = recon + γ·(latent_reg + β·kl)"""

    recon: dc.Node
    latent_reg: dc.Node
    kl: dc.Node
    total: dc.Node
    usage: np.ndarray

    def as_floats(self) -> dict:
        return {
            "recon": self.recon.item(),
            "latent_reg": self.latent_reg.item(),
            "kl": self.kl.item(),
            "total": self.total.item(),
        }


@dataclass(frozen=True)
class GMVQForward:
    """GM-VQ 前向的中间量，供损失与 ALBO 诊断共享"""

    bundle: post.PosteriorBundle
    sample: LatentSample
    reconstruction: dc.Node


# ---------------------------------------------------------------- 分布工具

def _check_rows(probs: np.ndarray, what: str) -> None:
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=-1), 1.0, atol=PROB_TOLERANCE, rtol=0.0):
        raise DomainError(f"{what} 必须是概率向量")


def aggregate_posterior(batch_pi) -> dc.Node:
    """q^(B)(c) = (1/|B|) Σ_x q(c|x)"""
    batch_pi = dc.as_node(batch_pi)
    if batch_pi.ndim != 2:
        raise ShapeError(f"batch 后验必须是 B×C 矩阵，实际形状: {batch_pi.shape}")
    if batch_pi.shape[0] == 0:
        raise DomainError("空 batch 无法聚合")
    return dc.mean(batch_pi, axis=0)


def entropy_nats(probs) -> dc.Node:
    """−Σ p log p，0·log 0 = 0（最后一维）"""
    probs = dc.as_node(probs)
    return dc.neg(dc.sum(dc.mul(probs, dc.log(dc.clamp_min(probs, LOG_CLAMP))), axis=-1))


def kl_to_uniform(q_b, C: Optional[int] = None) -> dc.Node:
    """D_KL(q ‖ Uniform(C)) = Σ q log(C q) = log C − H(q)"""
    q_b = dc.as_node(q_b)
    C = q_b.shape[-1] if C is None else C
    if C != q_b.shape[-1]:
        raise ShapeError(f"分量数 {C} 与分布长度 {q_b.shape[-1]} 不一致")
    plogp = dc.sum(dc.mul(q_b, dc.log(dc.clamp_min(q_b, LOG_CLAMP))), axis=-1)
    return dc.add(plogp, math.log(C))


def perplexity(q_b) -> float:
    """2^{H_2(q)}"""
    probs = np.asarray(q_b.value if isinstance(q_b, dc.Node) else q_b, dtype=np.float64)
    _check_rows(probs, "q^(B)")
    return float(2.0 ** scipy_entropy(probs, base=2))


def mutual_info_entropy_loss(batch_pi) -> dc.Node:
    """mean_x H(q(c|x)) − H(mean_x q(c|x))，恒 ≤ 0"""
    batch_pi = dc.as_node(batch_pi)
    conditional = dc.mean(entropy_nats(batch_pi))
    marginal = entropy_nats(aggregate_posterior(batch_pi))
    return dc.sub(conditional, marginal)


def _sum_sq_rows(diff: dc.Node) -> dc.Node:
    """batch 内逐样本平方范数后取均值"""
    return dc.mean(dc.sum(dc.square(diff), axis=-1))


# ---------------------------------------------------------------- GM-VQ

def gmvq_forward(
    x,
    model,
    tau: float,
    noise: LatentNoise,
    hard: bool = True,
) -> GMVQForward:
    """x → ẑ, ŵ → π, σ_c² → (c_q, z) → x̃"""
    x = dc.as_node(x, like=model.codebook.M)
    bundle = post.posterior_bundle(x, model)
    log_pi = post.log_posterior(bundle.logits)
    sample = sample_latent(log_pi, bundle.sigma2_c, model.codebook, tau, noise, hard=hard)
    return GMVQForward(bundle=bundle, sample=sample, reconstruction=model.decoder(sample.z))


def gmvq_loss(
    x,
    model,
    beta: Optional[float] = None,
    gamma: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    tau: float = 1.0,
    noise: Optional[LatentNoise] = None,
    hard: bool = True,
) -> LossBreakdown:
    """L_GM-VQ = E||x − D(z)||² + γ·(E||z − μ_c||² + β·D_KL(q^(B) ‖ p(c)))

    潜变量正则中的 μ_c 与生成 z 的是同一个 Gumbel 采样分量（单样本估计）。
    """
    config = model.config
    beta = config.beta if beta is None else beta
    gamma = config.gamma if gamma is None else gamma
    if beta < 0 or gamma < 0:
        raise DomainError(f"β、γ 必须非负: β={beta}, γ={gamma}")

    x = dc.as_node(x, like=model.codebook.M)
    if noise is None:
        if rng is None:
            raise ValueError("需要 rng 或预先抽取的噪声")
        noise = LatentNoise.draw(rng, x.shape[0], config.codebook_size, config.latent_dim)

    fwd = gmvq_forward(x, model, tau, noise, hard=hard)
    recon = _sum_sq_rows(dc.sub(x, fwd.reconstruction))
    latent_reg = _sum_sq_rows(dc.sub(fwd.sample.z, fwd.sample.codeword))
    q_b = aggregate_posterior(fwd.bundle.pi)
    kl = kl_to_uniform(q_b, config.codebook_size)
    total = dc.add(recon, dc.scale(dc.add(latent_reg, dc.scale(kl, beta)), gamma))
    return LossBreakdown(recon=recon, latent_reg=latent_reg, kl=kl, total=total, usage=np.array(q_b.value))


# ---------------------------------------------------------------- VQ-VAE 基线

def discretization_terms(zhat, codebook: Codebook, alpha: float) -> Tuple[dc.Node, dc.Node, np.ndarray]:
    """(||ẑ − sg[z_c]||², α·||sg[ẑ] − z_c||², 最近码字下标)"""
    if alpha < 0:
        raise DomainError(f"α 必须非负: {alpha}")
    zhat = dc.as_node(zhat, like=codebook.M)
    index = np.atleast_1d(codebook.nearest(zhat))
    z_c = dc.gather_rows(codebook.M, index)
    z_rows = zhat if zhat.ndim == 2 else dc.reshape(zhat, (1, codebook.L))
    encoder_term = _sum_sq_rows(dc.sub(z_rows, dc.stop_gradient(z_c)))
    codebook_term = dc.scale(_sum_sq_rows(dc.sub(dc.stop_gradient(z_rows), z_c)), alpha)
    return encoder_term, codebook_term, index


def vqvae_loss(x, model, alpha: Optional[float] = None, mi_weight: float = 0.0) -> LossBreakdown:
    """重建（STE）+ ||ẑ − sg[z_c]||² + α·||sg[ẑ] − z_c||²"""
    config = model.config
    alpha = config.alpha if alpha is None else alpha
    x = dc.as_node(x, like=model.codebook.M)
    zhat, _ = post.encoder_heads(x, model.encoder, config.latent_dim)
    z_q, _ = ste_quantize(zhat, model.codebook)
    recon = _sum_sq_rows(dc.sub(x, model.decoder(z_q)))
    encoder_term, codebook_term, index = discretization_terms(zhat, model.codebook, alpha)
    latent_reg = dc.add(encoder_term, codebook_term)

    assignments = dc.one_hot(index, config.codebook_size, dtype=model.codebook.M.dtype)
    q_b = assignments.mean(axis=0)
    total = dc.add(recon, latent_reg)
    if mi_weight > 0:
        # 确定性后验下该正则不依赖参数，这里按距离 softmax 的软分配计算
        soft = post.stochastic_vq_posterior(zhat, model.codebook, config.sigma_z2)
        total = dc.add(total, dc.scale(mutual_info_entropy_loss(soft), mi_weight))
    return LossBreakdown(
        recon=recon,
        latent_reg=latent_reg,
        kl=kl_to_uniform(q_b),
        total=total,
        usage=q_b,
    )


# ---------------------------------------------------------------- 随机 VQ 基线

def gaussian_nll(x: dc.Node, mean: dc.Node, variance: float) -> dc.Node:
    """逐样本 −log N(x; mean, σ²I)，最后一维求和"""
    dim = x.shape[-1]
    sq = dc.sum(dc.square(dc.sub(x, mean)), axis=-1)
    return dc.add(dc.scale(sq, 1.0 / (2.0 * variance)), 0.5 * dim * math.log(2.0 * math.pi * variance))


def stochastic_vq_loss(
    x,
    model,
    rng: Optional[np.random.Generator] = None,
    tau: float = 1.0,
    noise: Optional[LatentNoise] = None,
    enumerate_components: bool = False,
    sigma2: Optional[float] = None,
    sigma_x2: Optional[float] = None,
    mi_weight: float = 0.0,
) -> LossBreakdown:
    """随机 VQ 基线：total = E_{q(c|x)}[−log p(x|c)] − H(q(c|x)) + log C（batch 均值，nats）

    默认用一次 Gumbel 采样估计重建项；enumerate_components=True 时对全部分量精确求期望。
    recon 与 latent_reg 只作指标：前者是所选（或按 q 加权的）码字解码误差，后者是 E_q||ẑ − μ_c||²。
    """
    config = model.config
    sigma2 = config.sigma_z2 if sigma2 is None else sigma2
    sigma_x2 = config.sigma_x2 if sigma_x2 is None else sigma_x2
    codebook = model.codebook
    x = dc.as_node(x, like=codebook.M)
    if x.ndim != 2:
        raise ShapeError(f"x 必须是 B×D 矩阵，实际形状: {x.shape}")

    zhat, _ = post.encoder_heads(x, model.encoder, config.latent_dim)
    logits = post.stochastic_vq_logits(zhat, codebook, sigma2)
    q = dc.softmax_lastdim(logits)
    batch, dim = x.shape
    nll_const = 0.5 * dim * math.log(2.0 * math.pi * sigma_x2)

    if enumerate_components:
        decoded = model.decoder(codebook.M)  # C×D
        diff = dc.sub(dc.reshape(x, (batch, 1, dim)), dc.reshape(decoded, (1, codebook.C, dim)))
        sq_all = dc.sum(dc.square(diff), axis=-1)
        sq = dc.sum(dc.mul(q, sq_all), axis=-1)
    else:
        if noise is None:
            if rng is None:
                raise ValueError("需要 rng 或预先抽取的噪声")
            noise = LatentNoise.draw(rng, batch, codebook.C, codebook.L)
        _, c_q = gumbel_softmax_sample(dc.log_softmax_lastdim(logits), tau, gumbel=noise.gumbel)
        sq = dc.sum(dc.square(dc.sub(x, model.decoder(select_codeword(c_q, codebook)))), axis=-1)

    expected_nll = dc.add(dc.scale(sq, 1.0 / (2.0 * sigma_x2)), nll_const)
    bound = dc.mean(dc.add(dc.sub(expected_nll, entropy_nats(q)), math.log(codebook.C)))
    total = bound
    if mi_weight > 0:
        total = dc.add(total, dc.scale(mutual_info_entropy_loss(q), mi_weight))

    q_b = aggregate_posterior(q)
    latent_reg = dc.mean(dc.sum(dc.mul(q, post.squared_distances(zhat, codebook)), axis=-1))
    return LossBreakdown(
        recon=dc.mean(sq),
        latent_reg=latent_reg,
        kl=kl_to_uniform(q_b, codebook.C),
        total=total,
        usage=np.array(q_b.value),
    )


def stochastic_vq_bound(
    x,
    model,
    rng: Optional[np.random.Generator] = None,
    tau: float = 1.0,
    noise: Optional[LatentNoise] = None,
    enumerate_components: bool = False,
    sigma2: Optional[float] = None,
    sigma_x2: Optional[float] = None,
) -> dc.Node:
    return stochastic_vq_loss(
        x, model, rng=rng, tau=tau, noise=noise,
        enumerate_components=enumerate_components, sigma2=sigma2, sigma_x2=sigma_x2,
    ).total
