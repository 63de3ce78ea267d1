"""量化器基类"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core.losses import LossBreakdown


class BaseQuantizer(ABC):
    """量化器基类：训练损失与评估用的类别后验"""

    # False 时训练不退火温度，记录的 τ 固定为 tau_start
    uses_temperature: bool = True

    def __init__(self, model):
        self.model = model
        self.config = model.config

    @abstractmethod
    def compute_loss(self, x: dc.Node, tau: float, rng: Optional[np.random.Generator] = None) -> LossBreakdown:
        """一个 batch 的训练损失"""
        pass

    @abstractmethod
    def eval_posterior(self, x: dc.Node) -> np.ndarray:
        """确定性评估用的 B×C 类别后验（argmax 即所选分量）"""
        pass

    def prepare(self, zhat: np.ndarray) -> None:
        """码本完成 k-means 初始化后调用；默认无操作"""

    @property
    def name(self) -> str:
        return self.__class__.__name__
