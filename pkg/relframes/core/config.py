from typing import Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict

from relframes.core.logging import get_logger

logger = get_logger(__name__)


class Settings(BaseSettings):
    # --- Application Settings ---
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "."

    # --- Numerical Tolerances ---
    ATOL: float = 1e-10
    INVARIANCE_TOL: float = 1e-8

    # --- Discretisation Defaults ---
    DEFAULT_BINS: int = 64
    HAAR_NODES: int = 4096
    EPSILON_GRID: Tuple[float, ...] = (0.01, 0.05, 0.1, 0.25)
    TAIL_MASS: float = 1e-8

    model_config = SettingsConfigDict(
        env_prefix="RELFRAMES_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()
