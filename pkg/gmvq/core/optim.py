"""AdamW 优化器与带线性预热的余弦学习率调度"""

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from gmvq.core import diffcore as dc


@dataclass(frozen=True)
class WarmupCosineSchedule:
    """线性预热（起始倍率 start_factor）后余弦衰减到 min_lr，按步计算"""

    base_lr: float
    total_steps: int
    warmup_steps: int
    start_factor: float = 0.2
    min_lr: float = 0.0

    def __call__(self, step: int) -> float:
        if self.warmup_steps > 0 and step < self.warmup_steps:
            factor = self.start_factor + (1.0 - self.start_factor) * step / self.warmup_steps
            return self.base_lr * factor
        decay_steps = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / decay_steps)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """解耦权重衰减的 Adam；编码器、解码器与码本使用同一衰减系数"""

    def __init__(
        self,
        params: Sequence[dc.Node],
        lr: float = 1e-3,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params: List[dc.Node] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.value) for p in self.params}
        self._v: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.value) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, grads: Dict[dc.Node, np.ndarray], lr: float = None) -> None:
        """按给定梯度映射更新参数；未出现在图中的参数梯度视为 0"""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.assign(p.value * (1.0 - lr * self.weight_decay) - lr * update)
