"""Application configuration settings."""
from functools import lru_cache

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Engine settings loaded from environment variables (prefix ``BNUCB_``)."""

    model_config = SettingsConfigDict(
        env_prefix="BNUCB_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "BatchNeuralUCB Engine"
    APP_VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Covariance
    COV_REFRESH_INTERVAL: int = 1000
    COV_DUMP_MAX_DIM: int = 300

    # Numerical tolerances
    NTK_UNIT_TOL: float = 1e-6
    PSD_TOL: float = 1e-8

    # Training / diagnostics defaults
    DEFAULT_SGD_BATCH_SIZE: int = 64
    DEFAULT_NTK_SUBSAMPLE: int = 500

    # Output
    CSV_FLOAT_FORMAT: str = "%.10g"
    MAX_WORKERS: int = 1

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Accept log levels in any case."""
        if isinstance(v, str):
            return v.strip().upper()
        return v

    @field_validator("COV_REFRESH_INTERVAL", "MAX_WORKERS", "DEFAULT_SGD_BATCH_SIZE")
    @classmethod
    def must_be_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
