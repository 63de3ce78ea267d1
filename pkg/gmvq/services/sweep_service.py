"""β / γ 网格扫描与基线对比"""

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import spearmanr

from gmvq.config import get_settings
from gmvq.models.sweep import SUMMARY_COLUMNS, ComparisonResult, SweepCell, SweepSummary, SweepTrend
from gmvq.models.training import ModelConfig
from gmvq.services.data_service import Dataset
from gmvq.services.training_service import TrainingService, evaluate
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)
settings = get_settings()

DEFAULT_BETAS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_GAMMAS = (0.01, 0.1, 1.0)


def _with(config: ModelConfig, **updates) -> ModelConfig:
    return ModelConfig(**{**config.model_dump(), **updates})


def _spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    rho = spearmanr(x, y).statistic
    return None if math.isnan(rho) else float(rho)


def run_sweep(
    config: ModelConfig,
    dataset: Union[Dataset, np.ndarray],
    out_dir: Union[str, Path],
    betas: Sequence[float] = DEFAULT_BETAS,
    gammas: Sequence[float] = DEFAULT_GAMMAS,
    seeds: Sequence[int] = (0,),
) -> SweepSummary:
    """每个 (γ, β, seed) 单元一次完整训练，结果写入各自的运行目录"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells: List[SweepCell] = []
    for gamma in gammas:
        for beta in betas:
            for seed in seeds:
                run_dir = out_dir / f"gamma{gamma:g}_beta{beta:g}_seed{seed}"
                logger.info(f"扫描单元: γ={gamma:g} β={beta:g} seed={seed}")
                service = TrainingService(_with(config, beta=beta, gamma=gamma, seed=seed))
                service.train(dataset)
                service.save(run_dir)
                result = service.evaluate(dataset)
                cells.append(
                    SweepCell(
                        beta=beta,
                        gamma=gamma,
                        seed=seed,
                        mse=result.mse,
                        perplexity=result.perplexity,
                        codes_used=result.codes_used,
                        run_dir=run_dir.name,
                    )
                )

    trends = []
    for gamma in gammas:
        for seed in seeds:
            group = sorted((c for c in cells if c.gamma == gamma and c.seed == seed), key=lambda c: c.beta)
            x = [c.beta for c in group]
            trends.append(
                SweepTrend(
                    gamma=gamma,
                    seed=seed,
                    rho_perplexity=_spearman(x, [c.perplexity for c in group]),
                    rho_mse=_spearman(x, [c.mse for c in group]),
                )
            )
            logger.info(f"γ={gamma:g} seed={seed}: ρ(β, perplexity)={trends[-1].rho_perplexity}")

    summary = SweepSummary(cells=cells, trends=trends)
    write_summary(summary, out_dir / settings.SUMMARY_FILENAME)
    return summary


def write_summary(summary: SweepSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(SUMMARY_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for cell in summary.cells:
            writer.writerow(cell.to_row())
    trends_path = path.with_name("trends.csv")
    with trends_path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("gamma,seed,spearman_beta_perplexity,spearman_beta_mse\n")
        for trend in summary.trends:
            rhos = ["" if rho is None else repr(rho) for rho in (trend.rho_perplexity, trend.rho_mse)]
            handle.write(f"{trend.gamma!r},{trend.seed},{rhos[0]},{rhos[1]}\n")
    return path


def compare(
    config: ModelConfig,
    dataset: Union[Dataset, np.ndarray],
    seeds: Sequence[int] = (0, 1, 2),
) -> List[ComparisonResult]:
    """同配置同预算分别训练 GM-VQ 与 VQ-VAE（STE），返回逐 seed 的评估对比"""
    results = []
    for seed in seeds:
        evaluations: Dict[str, object] = {}
        for kind in ("gmvq", "vqvae_ste"):
            model, _ = TrainingService(_with(config, quantizer=kind, seed=seed)).train(dataset)
            evaluations[kind] = evaluate(model, dataset)
        comparison = ComparisonResult(seed=seed, gmvq=evaluations["gmvq"], baseline=evaluations["vqvae_ste"])
        logger.info(
            f"seed={seed}: perplexity 比值 {comparison.perplexity_ratio:.3f}, MSE 比值 {comparison.mse_ratio:.3f}"
        )
        results.append(comparison)
    return results
