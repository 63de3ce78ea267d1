"""应用配置管理"""

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """进程级配置类（环境变量前缀 GMVQ_）"""

    model_config = SettingsConfigDict(
        env_prefix="GMVQ_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # 日志配置
    LOG_LEVEL: str = Field(default="INFO")
    LOG_FORMAT: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    # 输出文件命名
    METRICS_FILENAME: str = Field(default="metrics.csv")
    CHECKPOINT_FILENAME: str = Field(default="checkpoint.gmvq")
    SUMMARY_FILENAME: str = Field(default="summary.csv")

    # 梯度检验
    GRAD_CHECK_STEP: float = Field(default=1e-5, gt=0.0, le=1e-3)
    KINK_TOLERANCE: float = Field(default=1e-2, gt=0.0)

    def get_log_level(self) -> str:
        """返回规范化的日志级别名称"""
        return self.LOG_LEVEL.upper()


@lru_cache()
def get_settings() -> Settings:
    """获取配置实例（单例模式）"""
    return Settings()
