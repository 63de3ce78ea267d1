"""超参数扫描与基线对比数据模型"""

from typing import List, Optional

from pydantic import BaseModel, Field

from gmvq.models.training import EvaluationResult

SUMMARY_COLUMNS = ("beta", "gamma", "seed", "mse", "perplexity", "codes_used", "run_dir")


class SweepCell(BaseModel):
    """网格中一次训练的最终评估"""

    beta: float = Field(..., ge=0.0)
    gamma: float = Field(..., ge=0.0)
    seed: int = Field(..., ge=0)
    mse: float = Field(..., ge=0.0)
    perplexity: float = Field(..., ge=1.0)
    codes_used: int = Field(..., ge=0)
    run_dir: str

    def to_row(self) -> dict:
        return {
            "beta": repr(self.beta),
            "gamma": repr(self.gamma),
            "seed": str(self.seed),
            "mse": repr(self.mse),
            "perplexity": repr(self.perplexity),
            "codes_used": str(self.codes_used),
            "run_dir": self.run_dir,
        }


class SweepTrend(BaseModel):
    """固定 γ 与 seed 时 β 与最终指标的 Spearman 秩相关（样本不足或常数列时为 None）"""

    gamma: float
    seed: int
    rho_perplexity: Optional[float] = None
    rho_mse: Optional[float] = None


class SweepSummary(BaseModel):
    cells: List[SweepCell]
    trends: List[SweepTrend]


class ComparisonResult(BaseModel):
    """同一预算下 GM-VQ 与 VQ-VAE（STE）的对比"""

    seed: int
    gmvq: EvaluationResult
    baseline: EvaluationResult

    @property
    def perplexity_ratio(self) -> float:
        return self.gmvq.perplexity / self.baseline.perplexity

    @property
    def mse_ratio(self) -> float:
        if self.baseline.mse == 0:
            return float("inf") if self.gmvq.mse > 0 else 1.0
        return self.gmvq.mse / self.baseline.mse
