"""训练相关数据模型"""

from typing import Dict, List, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

QuantizerKind = Literal["gmvq", "vqvae_ste", "stochastic_vq"]

METRICS_COLUMNS = ("epoch", "step", "mse", "perplexity", "kl", "latent_reg", "tau", "lr")


class ModelConfig(BaseModel):
    """模型与训练超参数（桌面规模默认值）"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # 结构
    input_dim: int = Field(64, gt=0, description="输入维度 D")
    latent_dim: int = Field(8, gt=0, description="潜变量维度 L")
    codebook_size: int = Field(32, ge=2, description="码本大小 C")
    encoder_hidden: List[int] = Field(default_factory=lambda: [128, 64], description="编码器隐藏层")
    decoder_hidden: List[int] = Field(default_factory=lambda: [64, 128], description="解码器隐藏层")
    quantizer: QuantizerKind = Field("gmvq", description="量化器类型")

    # 损失
    beta: float = Field(1.0, ge=0.0, description="KL 项权重 β（= 2σ_z²）")
    gamma: float = Field(0.1, ge=0.0, description="潜变量正则权重 γ（= σ_x²/σ_z²）")
    alpha: float = Field(0.25, ge=0.0, description="VQ-VAE 承诺损失权重 α")
    sigma_z2: float = Field(1.0, gt=0.0, description="生成模型潜变量方差 σ_z²，同时作为分量方差中的 σ²")
    sigma_x2: float = Field(1.0, gt=0.0, description="观测噪声方差 σ_x²")
    mi_entropy_weight: float = Field(0.0, ge=0.0, description="基线的互信息熵正则权重")

    # 优化
    batch_size: int = Field(256, gt=0)
    epochs: int = Field(50, ge=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    warmup_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    warmup_start_factor: float = Field(0.2, gt=0.0, le=1.0)

    # Gumbel-Softmax 温度退火
    tau_start: float = Field(2.0, gt=0.0)
    tau_end: float = Field(0.1, gt=0.0)
    tau_decay_fraction: float = Field(0.8, gt=0.0, le=1.0)

    kmeans_iters: int = Field(10, ge=1)
    init_confidence: float = Field(
        0.9, gt=0.0, lt=1.0, description="k-means 初始化后首个 batch 上 max π 的目标均值，用于设定 ŵ 初值"
    )
    seed: int = Field(0, ge=0)
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("encoder_hidden", "decoder_hidden", mode="before")
    @classmethod
    def parse_hidden(cls, v):
        if isinstance(v, str):
            v = [item for item in v.replace(" ", "").split(",") if item]
        return v

    @field_validator("encoder_hidden", "decoder_hidden")
    @classmethod
    def validate_hidden(cls, v):
        if any(size <= 0 for size in v):
            raise ValueError("隐藏层宽度必须为正")
        return v

    @model_validator(mode="after")
    def validate_temperatures(self):
        if self.tau_end > self.tau_start:
            raise ValueError("tau_end 不能大于 tau_start")
        return self

    @model_validator(mode="after")
    def validate_confidence(self):
        if self.init_confidence <= 1.0 / self.codebook_size:
            raise ValueError("init_confidence 必须大于 1/C")
        return self

    @property
    def head_width(self) -> int:
        """编码器输出宽度：ẑ 与 r̂ 拼接"""
        return 2 * self.latent_dim

    @classmethod
    def full_scale_preset(cls, dataset: Literal["cifar10", "celeba"], **overrides) -> "ModelConfig":
        """完整规模设置：1024 个码字，潜变量维度 64，batch 256，100 epochs"""
        presets = {
            "cifar10": {"learning_rate": 1e-2},
            "celeba": {"learning_rate": 1e-4},
        }
        if dataset not in presets:
            raise ValueError(f"未知的预设数据集: {dataset}")
        values = dict(
            codebook_size=1024,
            latent_dim=64,
            batch_size=256,
            epochs=100,
            **presets[dataset],
        )
        values.update(overrides)
        return cls(**values)


class MetricsRecord(BaseModel):
    """每个记录区间的训练指标"""

    epoch: int = Field(..., ge=0)
    step: int = Field(..., ge=0)
    mse: float = Field(..., ge=0.0, description="逐像素均方误差")
    perplexity: float = Field(..., ge=1.0, description="2^H(q^(B))，按 batch 平均")
    kl: float = Field(..., description="D_KL(q^(B) ‖ p(c))，nats")
    latent_reg: float = Field(..., ge=0.0)
    tau: float = Field(..., gt=0.0)
    learning_rate: float = Field(..., ge=0.0)

    def to_row(self) -> Dict[str, str]:
        """CSV 行（浮点用 repr 保证逐字节可复现）"""
        return {
            "epoch": str(self.epoch),
            "step": str(self.step),
            "mse": repr(self.mse),
            "perplexity": repr(self.perplexity),
            "kl": repr(self.kl),
            "latent_reg": repr(self.latent_reg),
            "tau": repr(self.tau),
            "lr": repr(self.learning_rate),
        }


class EvaluationResult(BaseModel):
    """确定性评估结果"""

    mse: float = Field(..., ge=0.0)
    perplexity: float = Field(..., ge=1.0)
    codes_used: int = Field(..., ge=0, description="argmax 分量中出现过的码字数")
