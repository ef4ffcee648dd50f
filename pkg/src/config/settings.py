"""
seqattr - Application Settings
Loads environment variables and provides configuration management
"""
import os
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))


class Settings(BaseSettings):
    """Application configuration settings"""

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",  # Ignore extra fields in .env
    )

    # App Configuration
    APP_NAME: str = Field(default="seqattr")
    DEBUG: bool = Field(default=True)
    LOG_LEVEL: str = Field(default="INFO")

    # Parallelism cap for per-image work (benchmark, dataset selectivity)
    SEQATTR_THREADS: int = Field(default_factory=_default_threads, ge=1)

    # Segmentation / masking defaults
    DEFAULT_CELL: int = Field(default=8, ge=1)
    DEFAULT_BASELINE: float = Field(default=0.0, ge=0.0, le=1.0)

    # Storage locations
    DATA_DIR: str = Field(default="data")
    MODEL_PATH: str = Field(default="models/slotnet.sxm")
    OUTPUT_DIR: str = Field(default="runs")


# Create global settings instance
settings = Settings()
