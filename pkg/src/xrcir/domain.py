"""Core value types and pipeline configuration."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class ImageHandle:
    id: str
    uri: str

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("image id must be non-empty")
        if not self.uri:
            raise InputError(f"image {self.id!r} has an empty uri")


@dataclass(frozen=True)
class Query:
    query_id: str
    reference: ImageHandle
    modification_text: str

    def __post_init__(self) -> None:
        if not self.modification_text.strip():
            raise InputError(f"query {self.query_id!r}: modification text is empty")


class CaptionSource(str, enum.Enum):
    CANDIDATE = "candidate"
    REFERENCE = "reference"
    TEXT_IMAGINATION = "text_imagination"
    VISION_IMAGINATION = "vision_imagination"


@dataclass(frozen=True)
class Caption:
    text: str
    source: CaptionSource

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InputError("caption text must be non-empty")
        object.__setattr__(self, "source", CaptionSource(self.source))


@dataclass(frozen=True)
class ImaginationResult:
    """Both imagination captions plus the edit list and attribute set."""

    c_t: Caption
    c_v: Caption
    m_t: tuple[str, ...]
    m_v: tuple[tuple[str, bool], ...]

    def __post_init__(self) -> None:
        if self.c_t.source is not CaptionSource.TEXT_IMAGINATION:
            raise InputError("c_t must come from text imagination")
        if self.c_v.source is not CaptionSource.VISION_IMAGINATION:
            raise InputError("c_v must come from vision imagination")
        object.__setattr__(self, "m_t", tuple(self.m_t))
        object.__setattr__(self, "m_v", tuple((a, bool(p)) for a, p in self.m_v))
        if not self.m_t:
            raise InputError("edit list m_t must be non-empty")
        if any(not a.strip() for a, _ in self.m_v):
            raise InputError("attribute names in m_v must be non-empty")

    def to_json(self) -> dict[str, Any]:
        return {
            "c_t": self.c_t.text,
            "c_v": self.c_v.text,
            "m_t": list(self.m_t),
            "m_v": [[a, p] for a, p in self.m_v],
        }


# Keys as they appear in config files and (dash-separated) on the command line.
CONFIG_KEYS = {
    "lambda": "lambda_",
    "z": "z",
    "k": "k",
    "k_prime": "k_prime",
    "n_questions": "n_questions",
    "temperature": "temperature",
    "top_p": "top_p",
    "max_inflight": "max_inflight",
    "query_parallelism": "query_parallelism",
}


@dataclass(frozen=True)
class PipelineConfig:
    lambda_: float = 0.15
    z: float = 60.0
    k: int = 50
    k_prime: int = 100
    n_questions: int = 3
    temperature: float = 0.0
    top_p: float = 1.0
    max_inflight: int = 8
    query_parallelism: int = 1

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict[str, Any]:
        return {key: getattr(self, attr) for key, attr in CONFIG_KEYS.items()}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Overlay ``data`` (config-file keys, dashes allowed) on ``base``."""
        changes = {}
        for raw_key, value in data.items():
            key = str(raw_key).replace("-", "_")
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {raw_key!r}")
            changes[CONFIG_KEYS[key]] = value
        return dataclasses.replace(base or cls(), **changes)


def load_config_file(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read a YAML or JSON key-value config file."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"config file {path} must hold a key-value mapping")
    return PipelineConfig.from_mapping(data, base)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x: Any) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise ConfigError.

    The error names the first violated invariant, checked in field order.
    """
    if not _is_real(cfg.lambda_) or not 0.0 <= cfg.lambda_ <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {cfg.lambda_!r}")
    if not _is_real(cfg.z) or cfg.z <= 0:
        raise ConfigError(f"z must be positive, got {cfg.z!r}")
    if not _is_int(cfg.k) or cfg.k < 1:
        raise ConfigError(f"k must be a positive integer, got {cfg.k!r}")
    if not _is_int(cfg.k_prime) or cfg.k_prime < 1:
        raise ConfigError(f"k_prime must be a positive integer, got {cfg.k_prime!r}")
    if cfg.k > cfg.k_prime:
        raise ConfigError(f"k exceeds k_prime ({cfg.k} > {cfg.k_prime})")
    if not _is_int(cfg.n_questions) or cfg.n_questions < 1:
        raise ConfigError(f"n_questions must be a positive integer, got {cfg.n_questions!r}")
    if not _is_real(cfg.temperature) or cfg.temperature < 0:
        raise ConfigError(f"temperature must be non-negative, got {cfg.temperature!r}")
    if not _is_real(cfg.top_p) or not 0.0 < cfg.top_p <= 1.0:
        raise ConfigError(f"top_p must lie in (0, 1], got {cfg.top_p!r}")
    if not _is_int(cfg.max_inflight) or cfg.max_inflight < 1:
        raise ConfigError(f"max_inflight must be a positive integer, got {cfg.max_inflight!r}")
    if not _is_int(cfg.query_parallelism) or cfg.query_parallelism < 1:
        raise ConfigError(
            f"query_parallelism must be a positive integer, got {cfg.query_parallelism!r}"
        )
    return cfg
