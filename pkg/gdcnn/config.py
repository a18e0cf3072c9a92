from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
import os
from pathlib import Path
from typing import Literal, Optional

from .errors import ConfigError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="GDCNN_", case_sensitive=True, extra="ignore")

    # Directory Settings
    DATA_DIR: str = Field("./data", description="Base directory for logs and metrics")

    @property
    def LOGS_DIR(self) -> str:
        return os.path.join(self.DATA_DIR, "logs")

    # Logging Settings
    LOG_LEVEL: str = Field("INFO", description="Logging level")
    LOG_FORMAT: str = Field(
        "%(asctime)s - [%(run_id)s] - %(name)s - %(levelname)s - %(message)s",
        description="Log message format"
    )
    LOG_MAX_SIZE: int = Field(10 * 1024 * 1024, description="Maximum log file size in bytes")
    LOG_BACKUP_COUNT: int = Field(5, description="Number of log file backups to keep")
    LOG_TO_FILE: bool = Field(True, description="Also write logs under LOGS_DIR")

    # Monitoring Settings
    ENABLE_METRICS: bool = Field(False, description="Write Prometheus metrics after each command")
    METRICS_FILE: str = Field("metrics.prom", description="Metrics file name, relative to DATA_DIR")

    # Performance Settings
    IMAGE_CACHE_SIZE: int = Field(4096, ge=0, description="Decoded image cache entries")
    MAX_WORKERS: int = Field(1, ge=1, description="Concurrent per-sample workers")

    @property
    def METRICS_PATH(self) -> str:
        return os.path.join(self.DATA_DIR, self.METRICS_FILE)


# Create settings instance
settings = Settings()


class RunConfig(BaseModel):
    """Every tunable of a pipeline run, loaded from a flat key = value file."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # model
    head: Literal["dense", "gap"] = "gap"
    input_size: int = Field(137, ge=38)
    conv_filters: tuple[int, int, int, int] = (32, 64, 128, 128)
    dense_hidden: int = Field(512, ge=1)
    dropout_rate: float = Field(0.8, ge=0.0, lt=1.0)

    # training
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(50, ge=1)
    epochs: int = Field(40, ge=1)
    noise_sigma: float = Field(0.05, ge=0.0)
    augment: bool = True
    train_fraction: float = Field(0.8, ge=0.0, le=1.0)
    val_fraction: float = Field(0.1, ge=0.0, le=1.0)
    test_fraction: float = Field(0.1, ge=0.0, le=1.0)

    # attention analysis
    attention_threshold: float = Field(0.5, gt=0.0, lt=1.0)
    min_overlap: float = Field(0.02, gt=0.0, lt=1.0)
    phalanges_end: float = Field(0.45, gt=0.0, lt=1.0)
    metacarpals_end: float = Field(0.65, gt=0.0, lt=1.0)
    carpals_end: float = Field(0.82, gt=0.0, lt=1.0)
    forearm_split: float = Field(0.5, gt=0.0, lt=1.0)
    mirror: bool = False
    upsample: Literal["bilinear", "nearest"] = "bilinear"

    seed: int = Field(0, ge=0, lt=2**64)
    manifest: Optional[Path] = None
    out_dir: Path = Path("out")

    @field_validator("conv_filters", mode="before")
    @classmethod
    def _split_filters(cls, value):
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


def _parse_config_lines(text: str) -> tuple[dict[str, str], dict[str, int]]:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
        lines[key] = lineno
    return values, lines


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment"""
    return _parse_config_lines(text)[0]


def _describe(error: ValidationError, path: Optional[Path], lines: dict[str, int]) -> str:
    problems = []
    for item in error.errors():
        key = str(item["loc"][0]) if item["loc"] else "config"
        where = f"{path}:{lines[key]}: " if key in lines else ""
        problems.append(f"{where}{key}: {item['msg']}")
    return "; ".join(problems)


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Build a RunConfig from an optional file plus overrides (overrides win)"""
    values: dict = {}
    lines: dict[str, int] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        file_values, lines = _parse_config_lines(text)
        values.update(file_values)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            lines.pop(key, None)
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {_describe(e, path, lines)}") from e
