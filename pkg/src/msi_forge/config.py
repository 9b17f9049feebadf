"""Configuration dataclasses shared by the pipeline stages and the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigInvalid, InvalidRange


@dataclass(frozen=True)
class FilterConfig:
    alpha: int
    beta: float = 0.015
    area_mode: str = "recomputed"
    include_crowd: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigInvalid(f"beta must lie in (0, 1), got {self.beta}")
        if isinstance(self.alpha, bool) or int(self.alpha) != self.alpha or self.alpha < 1:
            raise ConfigInvalid(f"alpha must be an integer >= 1, got {self.alpha}")
        if self.area_mode not in ("stored", "recomputed"):
            raise ConfigInvalid(f"area_mode must be 'stored' or 'recomputed', got {self.area_mode!r}")


@dataclass(frozen=True)
class DstConfig:
    eta1: float = 1e-4
    eta2: float = 5e-5
    e1: int = 7
    e2: int = 3

    def __post_init__(self):
        if not (self.e1 > self.e2 >= 1):
            raise ConfigInvalid(f"dual-stage epochs need e1 > e2 >= 1, got e1={self.e1} e2={self.e2}")
        if not (self.eta1 > self.eta2 > 0):
            raise ConfigInvalid(f"dual-stage rates need eta1 > eta2 > 0, got {self.eta1}, {self.eta2}")

    @property
    def total_epochs(self) -> int:
        return self.e1 + self.e2


@dataclass(frozen=True)
class ClsqConfig:
    k_min: int = 2
    k_max: int = 5
    total_epochs: int = 10
    gamma: float = 1.0

    def __post_init__(self):
        if not (1 <= self.k_min <= self.k_max):
            raise ConfigInvalid(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        if self.total_epochs < 1:
            raise ConfigInvalid(f"total_epochs must be >= 1, got {self.total_epochs}")
        if not self.gamma > 0:
            raise InvalidRange(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class PipelineConfig:
    instances: Optional[str] = None
    captions: Optional[str] = None
    images: Optional[str] = None
    pool: Optional[str] = None
    pool_root: Optional[str] = None
    out: Optional[str] = None
    filter: FilterConfig = field(default_factory=lambda: FilterConfig(alpha=2))
    dst: DstConfig = field(default_factory=DstConfig)
    clsq: ClsqConfig = field(default_factory=ClsqConfig)
    seed: int = 0
    workers: int = 1
    log_level: str = "INFO"
    caption_strategy: str = "first"
    resize_mode: str = "stretch"
    reuse_references: bool = True
    min_pool_size: int = 30
    error_ceiling: float = 0.0
    val_fraction: float = 0.0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {self.workers}")
        if self.caption_strategy not in ("first", "random"):
            raise ConfigInvalid(f"caption_strategy must be 'first' or 'random', got {self.caption_strategy!r}")
        if self.resize_mode not in ("stretch", "letterbox"):
            raise ConfigInvalid(f"resize_mode must be 'stretch' or 'letterbox', got {self.resize_mode!r}")
        if not 0.0 <= self.error_ceiling <= 1.0:
            raise ConfigInvalid(f"error_ceiling must lie in [0, 1], got {self.error_ceiling}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigInvalid(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def snapshot(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_NESTED = {"filter": FilterConfig, "dst": DstConfig, "clsq": ClsqConfig}


def pipeline_config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from a plain mapping (config file contents).

    Keys may use kebab-case or snake_case. Unknown keys are rejected.
    """
    norm = {str(k).replace("-", "_"): v for k, v in data.items()}
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(norm) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in norm.items():
        if key in _NESTED:
            if isinstance(value, _NESTED[key]):
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise ConfigInvalid(f"config section '{key}' must be a mapping")
            sub = {str(k).replace("-", "_"): v for k, v in value.items()}
            sub_known = {f.name for f in dataclasses.fields(_NESTED[key])}
            bad = set(sub) - sub_known
            if bad:
                raise ConfigInvalid(f"unknown keys in '{key}': {sorted(bad)}")
            try:
                kwargs[key] = _NESTED[key](**sub)
            except TypeError as exc:
                raise ConfigInvalid(f"config section '{key}': {exc}") from exc
        else:
            kwargs[key] = value
    return PipelineConfig(**kwargs)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON or YAML config document into a dict (not yet validated)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigInvalid(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            import yaml

            data = yaml.safe_load(text)
    except Exception as exc:
        raise ConfigInvalid(f"cannot parse config file {p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid(f"config file {p} must contain a mapping")
    return data
