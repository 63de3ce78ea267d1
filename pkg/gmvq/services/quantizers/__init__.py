"""量化器提供者包"""

from gmvq.core.errors import ConfigError
from gmvq.services.quantizers.base_quantizer import BaseQuantizer
from gmvq.services.quantizers.gmvq_quantizer import GMVQQuantizer
from gmvq.services.quantizers.stochastic_quantizer import StochasticVQQuantizer
from gmvq.services.quantizers.vqvae_quantizer import VQVAEQuantizer

__all__ = [
    "BaseQuantizer",
    "GMVQQuantizer",
    "StochasticVQQuantizer",
    "VQVAEQuantizer",
    "create_quantizer",
]


def create_quantizer(model) -> BaseQuantizer:
    """按 config.quantizer 选择量化器"""
    kind = model.config.quantizer.lower()
    if kind == "gmvq":
        return GMVQQuantizer(model)
    elif kind == "vqvae_ste":
        return VQVAEQuantizer(model)
    elif kind == "stochastic_vq":
        return StochasticVQQuantizer(model)
    else:
        raise ConfigError(f"不支持的量化器类型: {kind}")
