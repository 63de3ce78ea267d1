"""小型 MLP 编码器/解码器与 GM-VQ 模型容器"""

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from gmvq.core import diffcore as dc
from gmvq.core.codebook import Codebook
from gmvq.core.errors import ShapeError
from gmvq.models.training import ModelConfig


class Linear:
    """全连接层 y = xW + b，按 fan-in 均匀初始化"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=None, name: str = "linear"):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = dc.tensor(
            rng.uniform(-bound, bound, size=(in_features, out_features)),
            requires_grad=True, dtype=dtype, name=f"{name}.weight",
        )
        self.bias = dc.tensor(
            rng.uniform(-bound, bound, size=(out_features,)),
            requires_grad=True, dtype=dtype, name=f"{name}.bias",
        )

    def __call__(self, x: dc.Node) -> dc.Node:
        return dc.add(dc.matmul(x, self.weight), self.bias)

    def parameters(self) -> List[dc.Node]:
        return [self.weight, self.bias]


class MLP:
    """ReLU 多层感知机，最后一层线性输出"""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, dtype=None, name: str = "mlp"):
        if len(sizes) < 2:
            raise ShapeError("MLP 至少需要输入与输出两层")
        self.sizes = list(sizes)
        self.layers = [
            Linear(fan_in, fan_out, rng, dtype=dtype, name=f"{name}.{i}")
            for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x) -> dc.Node:
        h = dc.as_node(x, like=self.layers[0].weight)
        if h.shape[-1] != self.sizes[0]:
            raise ShapeError(f"输入维度 {h.shape[-1]} 与网络输入 {self.sizes[0]} 不一致")
        squeeze = h.ndim == 1
        if squeeze:
            h = dc.reshape(h, (1, self.sizes[0]))
        for layer in self.layers[:-1]:
            h = dc.relu(layer(h))
        h = self.layers[-1](h)
        return dc.reshape(h, (self.sizes[-1],)) if squeeze else h

    def parameters(self) -> List[dc.Node]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class GMVQModel:
    """x →E ẑ →M c →ε z →D x̃"""

    config: ModelConfig
    encoder: MLP
    decoder: MLP
    codebook: Codebook

    def parameters(self) -> List[dc.Node]:
        return self.encoder.parameters() + self.decoder.parameters() + [self.codebook.M]

    def named_parameters(self) -> Dict[str, dc.Node]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: np.array(p.value) for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ShapeError(f"状态缺少参数: {sorted(missing)}")
        for name, param in params.items():
            param.assign(state[name])


def build_model(config: ModelConfig) -> GMVQModel:
    """按配置构建模型；相同 seed 得到相同初始参数"""
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    encoder = MLP(
        [config.input_dim, *config.encoder_hidden, config.head_width], rng, dtype=dtype, name="encoder"
    )
    decoder = MLP(
        [config.latent_dim, *config.decoder_hidden, config.input_dim], rng, dtype=dtype, name="decoder"
    )
    codebook = Codebook(
        rng.uniform(-1.0 / config.codebook_size, 1.0 / config.codebook_size,
                    size=(config.codebook_size, config.latent_dim)),
        dtype=dtype,
    )
    return GMVQModel(config=config, encoder=encoder, decoder=decoder, codebook=codebook)
