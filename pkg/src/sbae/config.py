"""Pydantic configuration: environment settings plus model, training and evaluation configs."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal, Optional, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ArtifactError, ConfigError

INF = "inf"

Multiplier = Union[PositiveInt, Literal["inf"]]


class Settings(BaseSettings):
    """Default artifact locations.

    Reads from environment variables with SBAE_ prefix or .env file.
    Only paths and the log level live here; numeric knobs come from
    config files and flags.
    """

    data_dir: Path = Field(default=Path("data"), description="Where corpora and vocabularies are written")
    runs_dir: Path = Field(default=Path("runs"), description="Where manifests of artifact-less commands go")
    checkpoint_dir: Path = Field(default=Path("checkpoints"), description="Default training output directory")
    vocab_path: Optional[Path] = Field(default=None, description="Vocabulary file used when --vocab is omitted")
    log_level: str = Field(default="INFO", description="Root log level for the command line")

    model_config = SettingsConfigDict(
        env_prefix="SBAE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


def get_settings() -> Settings:
    """Get configuration from environment variables or .env file."""
    return Settings()


class ModelConfig(BaseModel):
    """Architecture of the autoencoder.

    ``n_heads`` left unset follows the divisibility rule (12 when d is a
    multiple of 12, otherwise 16). ``ell == 0`` builds a degenerate stack
    with no transformer layers and is only meant for checks.
    """

    model_config = ConfigDict(extra="forbid")

    d: PositiveInt = 768
    ell: int = Field(default=1, ge=0)
    m: Multiplier = 1
    n_heads: Optional[PositiveInt] = None
    ffn_dim: Optional[PositiveInt] = None
    dropout_p: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_seq_len: int = Field(default=128, ge=2)
    vocab_size: int = Field(default=30522, ge=6)
    layernorm_eps: float = Field(default=1e-12, gt=0.0)
    init_std: float = Field(default=0.02, gt=0.0)
    include_specials: bool = False

    @field_validator("m", mode="before")
    @classmethod
    def _parse_multiplier(cls, value: Any) -> Any:
        if isinstance(value, str):
            text = value.strip().lower()
            if text in ("inf", "infinity", "∞"):
                return INF
            return int(text)
        if isinstance(value, float) and math.isinf(value):
            return INF
        return value

    @model_validator(mode="after")
    def _apply_defaults(self) -> "ModelConfig":
        if self.n_heads is None:
            self.n_heads = 12 if self.d % 12 == 0 else 16
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.d
        return self

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def repeats(self, n: int) -> int:
        """Rows of the decoder input that carry the bottleneck for a length-n sentence."""
        return n if self.m == INF else min(self.m, n)


class TrainConfig(BaseModel):
    """Optimization recipe: Adam, micro-batches of 16 accumulated 8 times, one epoch."""

    model_config = ConfigDict(extra="forbid")

    micro_batch: PositiveInt = 16
    accum_steps: PositiveInt = 8
    lr: Optional[float] = Field(default=None, gt=0.0)
    epochs: PositiveInt = 1
    seed: int = 0
    checkpoint_every: int = Field(default=0, ge=0)
    max_steps: Optional[int] = Field(default=None, ge=0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    log_every: PositiveInt = 10
    prefetch: int = Field(default=4, ge=0)
    dtype: Literal["float32", "float64"] = "float32"

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.accum_steps


class EvalConfig(BaseModel):
    """Evaluation harness knobs."""

    model_config = ConfigDict(extra="forbid")

    bin_width: PositiveInt = 5
    n_samples: int = Field(default=8, ge=0)
    sample_min_len: int = Field(default=10, ge=0)
    sample_max_len: int = Field(default=30, ge=0)
    sample_seed: int = 0
    batch_size: PositiveInt = 64


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def load_config_file(path: Optional[Path]) -> dict[str, dict[str, Any]]:
    """Read a ``{"model": ..., "train": ..., "eval": ...}`` JSON file; missing path gives empty sections."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArtifactError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - {"model", "train", "eval"}
    if unknown:
        raise ConfigError(f"config file {path} has unknown sections: {sorted(unknown)}")
    return raw


def merge_config(cls: type[ConfigT], file_values: Optional[dict[str, Any]], overrides: dict[str, Any]) -> ConfigT:
    """Build ``cls`` from file values with non-None overrides on top."""
    values = dict(file_values or {})
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return cls.model_validate(values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or cls.__name__}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"invalid {cls.__name__}: {problems}") from exc


def config_digest_payload(*configs: BaseModel) -> str:
    """Canonical JSON of the merged configs, the form digested into manifests."""
    return json.dumps([c.model_dump(mode="json") for c in configs], sort_keys=True, separators=(",", ":"))
