"""随机 VQ 基线量化器"""

from typing import Optional

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.losses import LossBreakdown, stochastic_vq_loss
from gmvq.services.quantizers.base_quantizer import BaseQuantizer


class StochasticVQQuantizer(BaseQuantizer):
    """q(c|x) ∝ exp(−||ẑ − μ_c||²/2σ²)，以类别 ELBO 训练"""

    def compute_loss(self, x: dc.Node, tau: float, rng: Optional[np.random.Generator] = None) -> LossBreakdown:
        return stochastic_vq_loss(x, self.model, rng=rng, tau=tau, mi_weight=self.config.mi_entropy_weight)

    def eval_posterior(self, x: dc.Node) -> np.ndarray:
        zhat, _ = post.encoder_heads(x, self.model.encoder, self.config.latent_dim)
        return np.array(post.stochastic_vq_posterior(zhat, self.model.codebook, self.config.sigma_z2).value)
