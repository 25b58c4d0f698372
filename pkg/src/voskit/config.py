"""Pipeline configuration loaded from a single JSON document."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .fusion import DEFAULT_SCALES, FUSERS
from .memory import POLICIES, VARIANTS, TopKConfig
from .postprocess import TrackConfig, ZoomConfig
from .propagation import PropagationConfig

ENV_CONFIG = "VOSKIT_CONFIG"


@dataclass
class MemoryConfig:
    capacity: int = 4
    policy: str = "stride"
    short_term: bool = True
    topk_enabled: bool = False
    topk_k: int = 16


@dataclass
class BoundaryStage:
    enabled: bool = False
    patch_size: int = 5
    stride: int = 3


@dataclass
class ZoomStage:
    enabled: bool = False
    zoom: float = 4.0
    margin: float = 0.25
    area_threshold: int = 100
    lost_threshold: float = 0.5


@dataclass
class PipelineConfig:
    attention_variant: str = "eq2"
    temperature: float = 0.01
    id_dim: int = 16
    stride: int = 1
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    scales: list = field(default_factory=lambda: list(DEFAULT_SCALES))
    flip: bool = True
    fusion: str = "average"
    boundary: BoundaryStage = field(default_factory=BoundaryStage)
    zoom: ZoomStage = field(default_factory=ZoomStage)
    tolerance_px: int | None = None
    seed: int = 0

    def validate(self):
        if self.attention_variant not in VARIANTS:
            raise ConfigError(f"attention_variant must be one of {VARIANTS}")
        if self.memory.policy not in POLICIES:
            raise ConfigError(f"memory.policy must be one of {POLICIES}")
        if self.memory.capacity < 1:
            raise ConfigError("memory.capacity must be >= 1")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be a non-empty list of positive factors")
        if self.fusion not in FUSERS:
            raise ConfigError(f"fusion must be one of {sorted(FUSERS)}")
        if self.temperature <= 0 or self.stride < 1 or self.id_dim < 1:
            raise ConfigError("temperature, stride and id_dim must be positive")
        if self.zoom.zoom < 1:
            raise ConfigError("zoom.zoom must be >= 1")
        return self

    def propagation(self):
        m = self.memory
        return PropagationConfig(
            variant=self.attention_variant,
            temperature=self.temperature,
            id_dim=self.id_dim,
            stride=self.stride,
            capacity=m.capacity,
            policy=m.policy,
            short_term=m.short_term,
            topk=TopKConfig(m.topk_k, m.topk_enabled),
            seed=self.seed,
        )

    def zoom_config(self):
        z = self.zoom
        return ZoomConfig(z.zoom, z.margin, z.area_threshold, TrackConfig(lost_threshold=z.lost_threshold))

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {path + key!r}")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data):
    return _build(PipelineConfig, data, "").validate()


def load_config(path=None):
    """Read a JSON config; falls back to ``$VOSKIT_CONFIG`` then defaults."""
    path = path or os.environ.get(ENV_CONFIG)
    if not path:
        return PipelineConfig().validate()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)


def override(config, dotted):
    """Apply ``{"memory.capacity": 8, ...}`` overrides; None values are skipped."""
    for key, value in dotted.items():
        if value is None:
            continue
        target = config
        parts = key.split(".")
        for p in parts[:-1]:
            target = getattr(target, p)
        if not hasattr(target, parts[-1]):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, parts[-1], value)
    return config.validate()
