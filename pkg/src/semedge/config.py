"""Run configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from semedge.arch import ArchVariant, BackboneConfig
from semedge.errors import ConfigError


@dataclass
class RunConfig:
    variant: str = "CASENet"
    k: int = 3
    backbone: dict = field(default_factory=lambda: BackboneConfig().to_dict())
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 0.0005
    iter_size: int = 10
    max_steps: int = 300
    step_size: int | None = None  # default: 2/3 of max_steps
    gamma: float = 0.1
    seed: int | None = None
    crop: tuple[int, int] | None = (48, 48)
    mirror: bool = True
    radius: int = 2
    background_as_class: bool = False
    train_manifest: str | None = None
    test_manifest: str | None = None
    labels_dir: str | None = None  # precomputed label files from make-labels
    tolerance: float = 0.02
    n_thresholds: int = 99
    halve: bool = False
    checkpoint_every: int = 100
    log_window: int = 20
    threads: int = 1

    def __post_init__(self):
        if self.crop is not None:
            self.crop = tuple(int(c) for c in self.crop)
            if len(self.crop) != 2:
                raise ConfigError("crop must be [height, width]")
        ArchVariant.parse(self.variant)
        self.backbone_config()
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.iter_size < 1 or self.max_steps < 0 or self.radius < 1 or self.n_thresholds < 1:
            raise ConfigError("iter_size, radius and n_thresholds must be >= 1; max_steps >= 0")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("invalid optimizer settings")

    @property
    def arch(self) -> ArchVariant:
        return ArchVariant.parse(self.variant)

    @property
    def effective_step_size(self) -> int:
        if self.step_size is not None:
            return self.step_size
        return max(1, (2 * self.max_steps) // 3)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig.from_dict(self.backbone)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
        return int(self.seed)

    def resolved_paths(self, base: Path) -> "RunConfig":
        out = RunConfig(**self.to_dict())
        for name in ("train_manifest", "test_manifest", "labels_dir"):
            v = getattr(out, name)
            if v is not None and not os.path.isabs(v):
                setattr(out, name, str((base / v).resolve()))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop) if self.crop is not None else None
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        cfg = cls.from_dict(d)
        return cfg.resolved_paths(Path(path).parent)
