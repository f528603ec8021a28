import os
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv
import logging

logger = logging.getLogger(__name__)
load_dotenv()


class Settings(BaseSettings):
    """Application settings and configuration.

    Seeds are intentionally absent: every random computation takes an explicit seed.
    """

    # Logging
    LOG_LEVEL: str = "INFO"

    # Test defaults
    DEFAULT_ALPHA: float = 0.05
    PVALUE_DRAWS: int = 100_000
    CRITVAL_DRAWS: int = 200_000

    # Simulation defaults
    EXPERIMENT_DRAWS: int = 10_000
    SWEEP_POINTS: int = 25

    # Parallel Monte Carlo
    CHUNK_SIZE: int = 25_000
    THREADS: int = 0

    # HTTP service
    API_HOST: str = "0.0.0.0"
    API_PORT: int = 9014

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    def worker_count(self, threads: Optional[int] = None) -> int:
        """Resolve a thread count, 0 or None meaning available parallelism."""

        requested = threads if threads else self.THREADS
        if requested and requested > 0:
            return requested
        return os.cpu_count() or 1


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    try:
        settings = Settings()
        logger.debug("Settings loaded successfully")
        return settings
    except Exception as e:
        logger.error(f"Error loading settings: {str(e)}")
        raise
