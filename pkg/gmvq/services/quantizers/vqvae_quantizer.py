"""VQ-VAE（STE）基线量化器"""

from typing import Optional

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.losses import LossBreakdown, vqvae_loss
from gmvq.services.quantizers.base_quantizer import BaseQuantizer


class VQVAEQuantizer(BaseQuantizer):
    """最近邻量化 + 直通梯度；不使用温度"""

    uses_temperature = False

    def compute_loss(self, x: dc.Node, tau: float, rng: Optional[np.random.Generator] = None) -> LossBreakdown:
        return vqvae_loss(x, self.model, mi_weight=self.config.mi_entropy_weight)

    def eval_posterior(self, x: dc.Node) -> np.ndarray:
        zhat, _ = post.encoder_heads(x, self.model.encoder, self.config.latent_dim)
        codebook = self.model.codebook
        return dc.one_hot(np.atleast_1d(codebook.nearest(zhat)), codebook.C, dtype=codebook.M.dtype)
