"""Gumbel-Softmax 直通估计的梯度偏差与输入分布熵的关系

固定一组随机 logits，用不同的 softmax 温度得到不同熵的类别分布；对每个分布
比较精确梯度（枚举全部动作）与 Gumbel-Softmax 直通估计的平均梯度。
"""

import csv
import math
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import softmax
from scipy.stats import entropy as scipy_entropy
from scipy.stats import pearsonr

from gmvq.core import diffcore as dc
from gmvq.core.errors import DomainError
from gmvq.core.networks import MLP
from gmvq.core.sampling import gumbel_softmax_sample
from gmvq.models.bias import BiasSample, BiasSweepResult
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)

BiasMetric = Literal["absolute", "relative"]
ENTROPY_RANGE = (0.1, 0.95)
_LOG_TEMPERATURE_BRACKET = (math.log(1e-4), math.log(1e4))
_PROB_FLOOR = 1e-300


def build_scorer(num_actions: int, hidden_sizes: Sequence[int] = (50, 5), seed: int = 0) -> MLP:
    """非线性打分网络 f: R^C → R"""
    return MLP([num_actions, *hidden_sizes, 1], np.random.default_rng(seed), name="scorer")


def _logits_from_probs(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.shape[0] < 2:
        raise DomainError(f"需要长度 ≥ 2 的概率向量，实际形状: {probs.shape}")
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-9):
        raise DomainError("probs 必须是概率向量")
    return np.log(np.maximum(probs, _PROB_FLOOR))


def action_values(scorer: MLP, num_actions: int) -> np.ndarray:
    """(f(e_1), …, f(e_C))"""
    with dc.no_grad():
        return np.array(scorer(np.eye(num_actions)).value).reshape(num_actions)


def exact_gradient(probs, scorer: MLP) -> np.ndarray:
    """∂/∂logits E_{c~softmax(logits)}[f(e_c)]，枚举全部 C 个动作"""
    logits = dc.tensor(_logits_from_probs(probs), requires_grad=True, name="logits")
    values = action_values(scorer, logits.shape[0])
    expectation = dc.sum(dc.mul(dc.softmax_lastdim(logits), values))
    return dc.backward(expectation)[logits]


def gumbel_estimate(
    probs,
    scorer: MLP,
    tau: float,
    repeats: int = 50,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """直通 Gumbel-Softmax 梯度 ∂f(c_q)/∂logits 在 repeats 次采样上的平均"""
    if repeats < 1:
        raise DomainError(f"repeats 必须 ≥ 1: {repeats}")
    rng = rng if rng is not None else np.random.default_rng()
    base = _logits_from_probs(probs)
    total = np.zeros_like(base)
    for _ in range(repeats):
        logits = dc.tensor(base, requires_grad=True, name="logits")
        _, c_q = gumbel_softmax_sample(logits, tau, rng=rng)
        total += dc.backward(dc.sum(scorer(c_q)))[logits]
    return total / repeats


def gradient_bias(
    estimate: np.ndarray,
    exact: np.ndarray,
    metric: BiasMetric = "relative",
    scale: Optional[float] = None,
) -> float:
    """||estimate − exact||；relative 时除以 scale（缺省为 ||exact||）"""
    deviation = float(np.linalg.norm(estimate - exact))
    if metric == "absolute":
        return deviation
    if metric == "relative":
        norm = float(np.linalg.norm(exact)) if scale is None else float(scale)
        return deviation / norm if norm > 0 else (0.0 if deviation == 0 else float("inf"))
    raise DomainError(f"未知的偏差度量: {metric}")


def tempered_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    return softmax(np.asarray(logits, dtype=np.float64) / temperature)


def solve_temperature(logits: np.ndarray, target_entropy: float) -> float:
    """求 τ 使 H(softmax(logits/τ)) = target_entropy（nats），在 log τ 上用 brentq"""
    logits = np.asarray(logits, dtype=np.float64)
    if np.ptp(logits) == 0:
        raise DomainError("logits 全部相等，温度无法改变熵")
    if not 0 < target_entropy < math.log(logits.shape[0]):
        raise DomainError(f"目标熵必须在 (0, log C) 内: {target_entropy}")

    def gap(log_tau: float) -> float:
        return float(scipy_entropy(tempered_probs(logits, math.exp(log_tau)))) - target_entropy

    return math.exp(brentq(gap, *_LOG_TEMPERATURE_BRACKET, xtol=1e-12))


def temperature_grid(logits: np.ndarray, grid_points: int = 10) -> List[Tuple[float, float]]:
    """熵均匀落在 (0.1, 0.95)·log C 上的 [(τ, 熵), ...]"""
    if grid_points < 2:
        raise DomainError(f"网格点数必须 ≥ 2: {grid_points}")
    log_c = math.log(len(logits))
    targets = np.linspace(ENTROPY_RANGE[0] * log_c, ENTROPY_RANGE[1] * log_c, grid_points)
    grid = []
    for target in targets:
        tau = solve_temperature(logits, float(target))
        grid.append((tau, float(scipy_entropy(tempered_probs(logits, tau)))))
    return grid


def run_bias_sweep(
    num_actions: int = 10,
    hidden_sizes: Sequence[int] = (50, 5),
    seeds: int = 20,
    repeats: int = 50,
    grid_points: int = 10,
    estimator_tau: float = 0.5,
    bias_metric: BiasMetric = "relative",
    base_seed: int = 0,
    grid: Optional[Sequence[Tuple[float, float]]] = None,
) -> BiasSweepResult:
    """在多个打分网络初始化上扫描熵网格，返回全部样本与 (熵, 偏差) 的 Pearson 相关"""
    if seeds < 1:
        raise DomainError(f"seeds 必须 ≥ 1: {seeds}")
    logits = np.random.default_rng(base_seed).standard_normal(num_actions)
    grid = list(grid) if grid is not None else temperature_grid(logits, grid_points)
    if len({round(h, 12) for _, h in grid}) < 2:
        raise DomainError("熵网格退化：所有网格点熵相同")

    samples: List[BiasSample] = []
    for s in range(seeds):
        seed = base_seed + s
        scorer = build_scorer(num_actions, hidden_sizes, seed=seed)
        points = [(tau, h, tempered_probs(logits, tau)) for tau, h in grid]
        exacts = [exact_gradient(probs, scorer) for _, _, probs in points]
        # 同一打分网络的所有网格点共用一条 Gumbel 噪声流，偏差统一除以该网络在网格上最大的精确梯度范数
        scale = max(float(np.linalg.norm(exact)) for exact in exacts)
        for (tau, h, probs), exact in zip(points, exacts):
            estimate = gumbel_estimate(
                probs, scorer, estimator_tau, repeats, rng=np.random.default_rng([base_seed, s])
            )
            bias = gradient_bias(estimate, exact, bias_metric, scale=scale)
            samples.append(BiasSample(tau=tau, entropy=h, bias=bias, seed=seed))

    entropies = np.array([sample.entropy for sample in samples])
    biases = np.array([sample.bias for sample in samples])
    if np.ptp(biases) == 0:
        raise DomainError("所有偏差相同，Pearson 相关无定义")
    test = pearsonr(entropies, biases)
    logger.info(f"偏差扫描完成: {len(samples)} 个样本, ρ={test.statistic:.3f}, p={test.pvalue:.3g}")
    return BiasSweepResult(
        samples=samples,
        pearson_rho=float(test.statistic),
        p_value=float(test.pvalue),
        num_actions=num_actions,
        hidden_sizes=list(hidden_sizes),
        repeats=repeats,
        estimator_tau=estimator_tau,
        bias_metric=bias_metric,
    )


def write_bias_results(result: BiasSweepResult, path: Union[str, Path]) -> Tuple[Path, Path]:
    """CSV `entropy,bias,tau,seed`，并在同名 .meta.json 中记录估计器温度与偏差度量"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["entropy", "bias", "tau", "seed"])
        for sample in result.samples:
            writer.writerow([repr(sample.entropy), repr(sample.bias), repr(sample.tau), sample.seed])
    meta_path = path.with_suffix(".meta.json")
    meta_path.write_text(result.model_dump_json(exclude={"samples"}, indent=2), encoding="utf-8")
    return path, meta_path


def summary_line(result: BiasSweepResult) -> str:
    return f"pearson_rho,p_value\n{result.pearson_rho!r},{result.p_value!r}"
