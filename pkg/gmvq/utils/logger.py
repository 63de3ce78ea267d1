"""日志工具模块"""

import logging
import sys
from typing import Optional

from gmvq.config import get_settings

settings = get_settings()

# 全局日志配置（日志走 stderr，stdout 留给命令输出）
logging.basicConfig(
    level=getattr(logging, settings.get_log_level(), logging.INFO),
    format=settings.LOG_FORMAT,
    handlers=[logging.StreamHandler(sys.stderr)],
)


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """获取日志记录器"""
    if name is None:
        name = __name__

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, settings.get_log_level(), logging.INFO))
    return logger


class RunLogger:
    """训练运行日志记录器"""

    def __init__(self, logger_name: str = "gmvq.run"):
        self.logger = get_logger(logger_name)

    def log_start(self, quantizer: str, epochs: int, steps_per_epoch: int, seed: int):
        """记录训练开始"""
        self.logger.info(
            f"开始训练: quantizer={quantizer} epochs={epochs} "
            f"steps/epoch={steps_per_epoch} seed={seed}"
        )

    def log_epoch(self, record) -> None:
        """记录一个 epoch 的指标"""
        self.logger.info(
            f"epoch {record.epoch} step {record.step}: mse={record.mse:.6f} "
            f"perplexity={record.perplexity:.3f} kl={record.kl:.4f} "
            f"latent_reg={record.latent_reg:.4f} tau={record.tau:.3f} lr={record.learning_rate:.2e}"
        )

    def log_checkpoint(self, path) -> None:
        """记录检查点写入"""
        self.logger.info(f"检查点已写入: {path}")

    def log_error(self, error: Exception, context: Optional[dict] = None):
        """记录错误日志"""
        self.logger.error(f"错误: {error}")
        if context:
            self.logger.error(f"上下文: {self._format_context(context)}")

    def _format_context(self, context: dict) -> dict:
        """浮点上下文保留有效位数"""
        formatted = {}
        for key, value in context.items():
            if isinstance(value, float):
                formatted[key] = float(f"{value:.6g}")
            else:
                formatted[key] = value
        return formatted
