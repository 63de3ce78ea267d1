"""ALBO 的数值预言机：含归一化常数的 −ALBO、求积 log p(x) 与蒙特卡洛 ALBO 估计"""

import math
from typing import Callable, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp, softmax

from gmvq.core import diffcore as dc
from gmvq.core.errors import DomainError, ShapeError
from gmvq.core.losses import aggregate_posterior, gaussian_nll, gmvq_forward, kl_to_uniform
from gmvq.core.sampling import LatentNoise

DecoderFn = Callable[[np.ndarray], np.ndarray]


def negative_albo_full(
    x,
    model,
    noise: LatentNoise,
    tau: float = 1.0,
    sigma_x2: float = 1.0,
    sigma_z2: float = 1.0,
    hard: bool = True,
) -> dc.Node:
    """−ALBO（含高斯归一化常数），与 gmvq_loss 共享同一条前向通路与噪声"""
    x = dc.as_node(x, like=model.codebook.M)
    fwd = gmvq_forward(x, model, tau, noise, hard=hard)
    nll_x = dc.mean(gaussian_nll(x, fwd.reconstruction, sigma_x2))
    nll_z = dc.mean(gaussian_nll(fwd.sample.z, fwd.sample.codeword, sigma_z2))
    kl = kl_to_uniform(aggregate_posterior(fwd.bundle.pi), model.config.codebook_size)
    return dc.add(dc.add(nll_x, nll_z), kl)


def albo_identity_constant(input_dim: int, latent_dim: int, sigma_x2: float, sigma_z2: float) -> float:
    """β = 2σ_z²、γ = σ_x²/σ_z² 时 L_GM-VQ − 2σ_x²·(−ALBO) 的常数值"""
    return -sigma_x2 * (
        input_dim * math.log(2.0 * math.pi * sigma_x2) + latent_dim * math.log(2.0 * math.pi * sigma_z2)
    )


def _log_normal(x: np.ndarray, mean: np.ndarray, variance: float) -> np.ndarray:
    dim = x.shape[-1]
    sq = np.sum((x - mean) ** 2, axis=-1)
    return -0.5 * sq / variance - 0.5 * dim * math.log(2.0 * math.pi * variance)


def log_marginal_quadrature(
    x: np.ndarray,
    means: np.ndarray,
    decoder_fn: DecoderFn,
    sigma_x2: float,
    sigma_z2: float,
    num_points: int = 20001,
    width: float = 12.0,
) -> float:
    """log p(x) = log Σ_c p(c) ∫ N(z; μ_c, σ_z²) N(x; D(z), σ_x² I) dz（仅 L = 1，均匀 p(c)）"""
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if sigma_x2 <= 0 or sigma_z2 <= 0:
        raise DomainError("方差必须为正")
    sd = math.sqrt(sigma_z2)
    grid = np.linspace(means.min() - width * sd, means.max() + width * sd, num_points)
    decoded = np.asarray(decoder_fn(grid.reshape(-1, 1)), dtype=np.float64)
    if decoded.shape != (num_points, x.shape[0]):
        raise ShapeError(f"解码器输出形状 {decoded.shape} 与 x 维度 {x.shape[0]} 不一致")
    log_lik = _log_normal(x[None, :], decoded, sigma_x2)

    per_component = []
    for mu in means:
        log_integrand = log_lik + _log_normal(grid[:, None], np.array([mu]), sigma_z2)
        peak = np.max(log_integrand)
        per_component.append(peak + math.log(trapezoid(np.exp(log_integrand - peak), grid)))
    return float(logsumexp(np.array(per_component)) - math.log(len(means)))


def albo_monte_carlo(
    x: np.ndarray,
    zhat: np.ndarray,
    what: np.ndarray,
    means: np.ndarray,
    decoder_fn: DecoderFn,
    sigma_x2: float,
    sigma_z2: float,
    sigma2: float,
    num_samples: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """单个 x（|B| = 1，q(c) = q(c|x)）的 ALBO 蒙特卡洛估计，返回 (估计值, 标准误)

    c ~ q(c) 与 z ~ q(z|x) 相互独立地抽取，与下界推导中的期望一致。
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    means = np.asarray(means, dtype=np.float64)
    if means.ndim == 1:
        means = means.reshape(-1, 1)
    C, L = means.shape
    zhat = np.asarray(zhat, dtype=np.float64).reshape(L)
    what = np.asarray(what, dtype=np.float64).reshape(L)

    logits = -0.5 * np.sum(what * (zhat - means) ** 2, axis=-1)
    pi = softmax(logits)
    log_pi = logits - logsumexp(logits)
    sigma2_c = np.sum((zhat - means) ** 2, axis=-1) / L / (2.0 * sigma2)

    c = rng.choice(C, size=num_samples, p=pi)
    c_z = rng.choice(C, size=num_samples, p=pi)
    z = means[c_z] + np.sqrt(sigma2_c[c_z])[:, None] * rng.standard_normal((num_samples, L))

    terms = (
        _log_normal(x[None, :], np.asarray(decoder_fn(z), dtype=np.float64), sigma_x2)
        + _log_normal(z, means[c], sigma_z2)
        - math.log(C)
        - log_pi[c]
    )
    return float(np.mean(terms)), float(np.std(terms, ddof=1) / math.sqrt(num_samples))
