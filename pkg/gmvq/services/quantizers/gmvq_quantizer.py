"""GM-VQ 量化器"""

from typing import Optional

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.errors import DomainError
from gmvq.core.losses import LossBreakdown, gmvq_loss
from gmvq.services.quantizers.base_quantizer import BaseQuantizer
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)


class GMVQQuantizer(BaseQuantizer):
    """高斯混合后验 + Gumbel-Softmax 采样，ALBO 目标"""

    def prepare(self, zhat: np.ndarray) -> None:
        """按 k-means 码本校准 ŵ 初值，使首个 batch 上的分配一开始就有置信度"""
        try:
            precision = post.calibrate_precision(zhat, self.model.codebook, self.config.init_confidence)
        except DomainError as e:
            logger.warning(f"跳过 ŵ 校准: {e}")
            return
        post.init_precision_head(self.model.encoder, self.config.latent_dim, precision)
        logger.info(f"ŵ 初值校准为 {precision:.4g}（目标 mean max π = {self.config.init_confidence}）")

    def compute_loss(self, x: dc.Node, tau: float, rng: Optional[np.random.Generator] = None) -> LossBreakdown:
        return gmvq_loss(x, self.model, rng=rng, tau=tau)

    def eval_posterior(self, x: dc.Node) -> np.ndarray:
        return np.array(post.posterior_bundle(x, self.model).pi.value)
