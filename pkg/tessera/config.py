"""Configuration settings for tessera experiments."""
import json
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigError


class Settings(BaseSettings):
    """Defaults loaded from environment variables (prefix TESSERA_) or a .env file."""

    # Sampling
    intensity: float = 1.0
    master_seed: int = 20240601
    metric: str = "jm"

    # Padding radius A(log s)^{1/3} and window margin multiple
    padding_A: float = 2.0
    padding_factor: float = 3.0

    # Coupling constants
    eps: float = 0.3
    cluster_a: float = 0.1

    # Resolution
    angular_budget: int = 16
    grid_divisions: int = 256
    max_refinements: int = 6

    # Runtime
    workers: int = 1
    log_level: str = "INFO"
    output_dir: str = "results"

    model_config = SettingsConfigDict(env_prefix="TESSERA_", env_file=".env", env_file_encoding="utf-8")


# Global settings instance
settings = Settings()


Command = Literal["cross", "tail", "pc", "couple", "faces", "hilhorst", "render"]

# Nested sections accepted in config files; their keys are lifted to the top level.
_SECTIONS = ("sampling", "crossing", "tail", "coupling", "faces", "output", "render")


class ExperimentConfig(BaseModel):
    """A fully validated experiment description."""

    command: Command = "cross"
    metric: str = Field(default_factory=lambda: settings.metric)
    p: float = Field(default=0.5, ge=0.0, le=1.0)
    p_grid: Optional[List[float]] = None
    rho: float = Field(default=1.0, gt=0.0)
    s: float = Field(default=30.0, gt=0.0)
    trials: int = Field(default=200, ge=1)
    master_seed: int = Field(default_factory=lambda: settings.master_seed)
    intensity: float = Field(default_factory=lambda: settings.intensity, gt=0.0)
    thickness: Optional[float] = Field(default=None, gt=0.0)
    padding_A: float = Field(default_factory=lambda: settings.padding_A, gt=0.0)

    # Tail estimation
    sizes: List[int] = Field(default_factory=lambda: list(range(1, 21)))
    window: Optional[float] = Field(default=None, gt=0.0)

    # Critical-point bracketing
    tolerance: float = Field(default=0.04, ge=0.02)

    # Coupling
    p1: float = Field(default=0.45, gt=0.0, lt=1.0)
    p2: float = Field(default=0.55, gt=0.0, lt=1.0)
    eps: float = Field(default_factory=lambda: settings.eps, gt=0.0)
    eps_prime: Optional[float] = Field(default=None, gt=0.0)
    delta: Optional[float] = Field(default=None, gt=0.0)
    cluster_a: float = Field(default_factory=lambda: settings.cluster_a, gt=0.0)

    # Faces
    k_min: int = Field(default=4, ge=0)
    k_max: int = Field(default=25, ge=1)
    probes: int = Field(default=64, ge=64)
    mode: Literal["threeD", "planarVoronoi"] = "threeD"

    # Resolution / runtime
    angular_budget: int = Field(default_factory=lambda: settings.angular_budget, ge=16)
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)
    out: Optional[str] = None
    check: bool = False
    fill: bool = True

    @field_validator("metric")
    @classmethod
    def _known_metric(cls, value: str) -> str:
        if value not in ("jm", "euclid3", "l1"):
            raise ValueError(f"unknown metric {value!r}; expected jm, euclid3 or l1")
        return value

    @field_validator("p_grid")
    @classmethod
    def _probabilities(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(not 0.0 <= p <= 1.0 for p in value):
            raise ValueError("p_grid entries must lie in [0, 1]")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.p1 > self.p2:
            raise ValueError("p1 must not exceed p2")
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        if any(n < 1 for n in self.sizes):
            raise ValueError("cluster sizes must be positive")
        return self

    @property
    def resolved_thickness(self) -> float:
        return self.thickness if self.thickness is not None else self.s

    @property
    def resolved_eps_prime(self) -> float:
        return self.eps_prime if self.eps_prime is not None else self.eps / 3.0

    def resolved(self) -> dict:
        """Fully resolved configuration, embedded in every output file."""
        data = self.model_dump()
        data["thickness"] = self.resolved_thickness
        data["eps_prime"] = self.resolved_eps_prime
        return data


def _flatten(raw: dict) -> dict:
    flat: dict = {}
    for key, value in raw.items():
        if key in _SECTIONS and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def load_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """
    Build an ExperimentConfig from an optional JSON file plus explicit overrides.

    Args:
        path: JSON config file; nested section objects are flattened
        overrides: values that take precedence over the file (None values are ignored)

    Returns:
        The validated configuration

    Raises:
        ConfigError: unreadable file or failed validation
    """
    data: dict = {}
    if path:
        try:
            data = _flatten(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
