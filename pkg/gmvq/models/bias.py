"""梯度偏差实验数据模型"""

from typing import List, Literal

from pydantic import BaseModel, Field


class BiasSample(BaseModel):
    """一个熵水平上的偏差测量"""

    tau: float = Field(..., gt=0.0, description="作用在固定 logits 上的 softmax 温度")
    entropy: float = Field(..., ge=0.0, description="输入分布的熵（nats）")
    bias: float = Field(
        ..., ge=0.0, description="估计梯度均值与精确梯度之差的范数（relative 时除以该打分网络在网格上最大的精确梯度范数）"
    )
    seed: int = Field(..., ge=0)


class BiasSweepResult(BaseModel):
    """整组扫描结果与 Pearson 相关"""

    samples: List[BiasSample]
    pearson_rho: float
    p_value: float
    num_actions: int = Field(10, ge=2)
    hidden_sizes: List[int] = Field(default_factory=lambda: [50, 5])
    repeats: int = Field(50, ge=1)
    estimator_tau: float = Field(0.5, gt=0.0, description="Gumbel-Softmax 估计器温度")
    bias_metric: Literal["absolute", "relative"] = "relative"
