"""训练与评估服务"""

import csv
import io
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from gmvq.config import get_settings
from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.codebook import kmeans_init
from gmvq.core.errors import DivergenceError, DomainError, NonFiniteError
from gmvq.core.losses import perplexity
from gmvq.core.networks import GMVQModel, build_model
from gmvq.core.optim import AdamW, WarmupCosineSchedule
from gmvq.core.sampling import TemperatureSchedule, deterministic_latent
from gmvq.models.training import METRICS_COLUMNS, EvaluationResult, MetricsRecord, ModelConfig
from gmvq.services.checkpoint_service import save_checkpoint
from gmvq.services.data_service import Dataset
from gmvq.services.quantizers import BaseQuantizer, create_quantizer
from gmvq.utils.logger import RunLogger, get_logger

logger = get_logger(__name__)
settings = get_settings()


def _as_array(dataset: Union[Dataset, np.ndarray]) -> np.ndarray:
    data = dataset.data if isinstance(dataset, Dataset) else np.asarray(dataset)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DomainError(f"数据集必须是非空 N×D 矩阵，实际形状: {data.shape}")
    return data


class TrainingService:
    """训练服务类：k-means 初始化码本，AdamW + warmup/cosine，逐步退火温度"""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.settings = settings
        self.run_logger = RunLogger()
        self.model: Optional[GMVQModel] = None
        self.quantizer: Optional[BaseQuantizer] = None
        self.history: List[MetricsRecord] = []
        self.dtype = np.dtype(config.dtype)
        # 训练流与模型初始化流分开，二者都只由 seed 决定
        self.rng = np.random.default_rng([config.seed, 1])

    def initialize(self, data: np.ndarray) -> GMVQModel:
        """构建模型，用首个 batch 的 ẑ 做 k-means 码本初始化，再交给量化器做各自的初始化"""
        config = self.config
        self.model = build_model(config)
        self.quantizer = create_quantizer(self.model)

        first = self.rng.permutation(data.shape[0])[: max(config.batch_size, config.codebook_size)]
        with dc.no_grad():
            zhat, _ = post.encoder_heads(
                dc.tensor(data[first], dtype=self.dtype), self.model.encoder, config.latent_dim
            )
        codebook = kmeans_init(
            zhat.value, config.codebook_size, iters=config.kmeans_iters, seed=config.seed, dtype=self.dtype
        )
        self.model.codebook.M.assign(codebook.M.value)
        self.quantizer.prepare(zhat.value)
        logger.info(f"训练服务初始化完成，使用量化器: {config.quantizer}")
        return self.model

    def train(self, dataset: Union[Dataset, np.ndarray]) -> Tuple[GMVQModel, List[MetricsRecord]]:
        data = _as_array(dataset)
        config = self.config
        model = self.model if self.model is not None else self.initialize(data)

        n = data.shape[0]
        steps_per_epoch = math.ceil(n / config.batch_size)
        total_steps = config.epochs * steps_per_epoch
        tau_schedule = TemperatureSchedule(
            total_steps, config.tau_start, config.tau_end, config.tau_decay_fraction
        )
        lr_schedule = WarmupCosineSchedule(
            base_lr=config.learning_rate,
            total_steps=total_steps,
            warmup_steps=int(round(config.warmup_fraction * total_steps)),
            start_factor=config.warmup_start_factor,
        )
        optimizer = AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
        self.run_logger.log_start(config.quantizer, config.epochs, steps_per_epoch, config.seed)

        last_good = model.state_dict()
        step = 0
        for epoch in range(config.epochs):
            order = self.rng.permutation(n)
            totals = {"mse": 0.0, "perplexity": 0.0, "kl": 0.0, "latent_reg": 0.0}
            tau = lr = 0.0
            for b in range(steps_per_epoch):
                batch = dc.tensor(data[order[b * config.batch_size:(b + 1) * config.batch_size]], dtype=self.dtype)
                tau = tau_schedule(step) if self.quantizer.uses_temperature else config.tau_start
                lr = lr_schedule(step)
                try:
                    breakdown = self.quantizer.compute_loss(batch, tau, self.rng)
                    grads = dc.backward(breakdown.total)
                    if not all(np.all(np.isfinite(g)) for g in grads.values()):
                        raise NonFiniteError("梯度包含非有限值")
                except NonFiniteError as e:
                    self.run_logger.log_error(e, {"epoch": epoch, "step": step, "tau": tau, "lr": lr})
                    raise DivergenceError(f"第 {step} 步训练发散: {e}", step, last_good) from e

                optimizer.step(grads, lr)
                values = breakdown.as_floats()
                totals["mse"] += values["recon"] / batch.shape[1]
                totals["perplexity"] += perplexity(breakdown.usage)
                totals["kl"] += values["kl"]
                totals["latent_reg"] += values["latent_reg"]
                step += 1

            record = MetricsRecord(
                epoch=epoch,
                step=step,
                mse=totals["mse"] / steps_per_epoch,
                perplexity=min(float(config.codebook_size), totals["perplexity"] / steps_per_epoch),
                kl=totals["kl"] / steps_per_epoch,
                latent_reg=totals["latent_reg"] / steps_per_epoch,
                tau=tau,
                learning_rate=lr,
            )
            self.history.append(record)
            self.run_logger.log_epoch(record)
            last_good = model.state_dict()

        return model, list(self.history)

    def evaluate(self, dataset: Union[Dataset, np.ndarray], batch_size: Optional[int] = None) -> EvaluationResult:
        if self.model is None:
            raise ValueError("模型尚未初始化")
        return evaluate(self.model, dataset, batch_size)

    def save(self, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
        """写出 metrics.csv 与检查点"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = write_metrics(self.history, out_dir / self.settings.METRICS_FILENAME)
        checkpoint_path = save_checkpoint(self.model, out_dir / self.settings.CHECKPOINT_FILENAME)
        self.run_logger.log_checkpoint(checkpoint_path)
        return metrics_path, checkpoint_path


def train(config: ModelConfig, dataset: Union[Dataset, np.ndarray]) -> Tuple[GMVQModel, List[MetricsRecord]]:
    return TrainingService(config).train(dataset)


def evaluate(
    model: GMVQModel,
    dataset: Union[Dataset, np.ndarray],
    batch_size: Optional[int] = None,
) -> EvaluationResult:
    """确定性评估：argmax 分量，z = μ_c，不加噪声；困惑度逐 batch 计算后取平均"""
    data = _as_array(dataset)
    batch_size = batch_size or model.config.batch_size
    quantizer = create_quantizer(model)
    dtype = model.codebook.M.dtype

    squared_error = 0.0
    perplexities = []
    used = set()
    with dc.no_grad():
        for start in range(0, data.shape[0], batch_size):
            x = dc.tensor(data[start:start + batch_size], dtype=dtype)
            pi = quantizer.eval_posterior(x)
            index, z = deterministic_latent(pi, model.codebook)
            recon = model.decoder(dc.tensor(z, dtype=dtype))
            squared_error += float(np.sum((x.value - recon.value) ** 2, dtype=np.float64))
            perplexities.append(perplexity(pi.astype(np.float64).mean(axis=0)))
            used.update(int(i) for i in index)

    return EvaluationResult(
        mse=squared_error / data.size,
        perplexity=float(np.mean(perplexities)),
        codes_used=len(used),
    )


def metrics_to_csv(history: List[MetricsRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(METRICS_COLUMNS), lineterminator="\n")
    writer.writeheader()
    for record in history:
        writer.writerow(record.to_row())
    return buffer.getvalue()


def write_metrics(history: List[MetricsRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(metrics_to_csv(history), encoding="utf-8")
    return path
