"""共享测试夹具"""

import numpy as np
import pytest

from gmvq.core.networks import build_model
from gmvq.models.training import ModelConfig
from gmvq.services.data_service import make_synthetic_dataset


@pytest.fixture
def rng():
    """固定种子的随机数生成器"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """桌面测试用的小模型配置"""
    return ModelConfig(
        input_dim=6,
        latent_dim=2,
        codebook_size=4,
        encoder_hidden=[8],
        decoder_hidden=[8],
        batch_size=16,
        epochs=2,
        seed=3,
    )


@pytest.fixture
def small_model(small_config):
    return build_model(small_config)


@pytest.fixture
def small_dataset():
    """4 个分量、6 维、64 个样本"""
    return make_synthetic_dataset(4, 6, 64, spread=0.1, seed=0)
