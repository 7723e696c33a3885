"""Training configuration, stored as JSON that mirrors :class:`TrainConfig`."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from ..core import InvalidArgumentError
from ..detector.model import ArchConfig
from ..fogsynth import FogParams
from ..losses import LossWeights
from ..pseudo import PseudoLabelConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 10
    num_classes: int = 6
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    optimizer: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    grad_clip: float = 10.0
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    pseudo: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    grl_max_lambda: float = 1.0
    grl_warmup_fraction: float = 0.5
    burn_in_fraction: float = 0.4
    adaptation: bool = True
    arch: ArchConfig = field(default_factory=ArchConfig)
    fog: FogParams = field(default_factory=FogParams)
    rpn_batch: int = 256
    roi_batch: int = 64
    roi_fg_fraction: float = 0.25
    cons_iou: float = 0.5
    cons_student_threshold: float = 0.5
    depth_scale: float = 10.0
    deterministic: bool = False

    def __post_init__(self):
        if len(self.split) != 3 or any(f < 0 for f in self.split) or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise InvalidArgumentError(f"split fractions must be three non-negative values summing to 1, got {self.split}")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise InvalidArgumentError(f"lr must be a positive finite number, got {self.lr}")
        if not (math.isfinite(self.lr_gamma) and self.lr_gamma > 0):
            raise InvalidArgumentError(f"lr_gamma must be a positive finite number, got {self.lr_gamma}")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        if self.arch.num_classes != self.num_classes:
            raise InvalidArgumentError("arch.num_classes must equal num_classes")
        if not 0.0 <= self.burn_in_fraction <= 1.0:
            raise InvalidArgumentError("burn_in_fraction must lie in [0, 1]")
        if any(m < 1 for m in self.lr_milestones) or list(self.lr_milestones) != sorted(self.lr_milestones):
            raise InvalidArgumentError("lr_milestones must be increasing epoch numbers >= 1")
        if self.grl_max_lambda < 0:
            raise InvalidArgumentError("grl_max_lambda must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        num_classes = d.get("num_classes", 6)
        for k in ("split", "lr_milestones"):
            if k in d:
                d[k] = tuple(d[k])
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "pseudo" in d:
            d["pseudo"] = PseudoLabelConfig(**d["pseudo"])
        arch = dict(d.get("arch", {}))
        arch.setdefault("num_classes", num_classes)
        d["arch"] = ArchConfig.from_dict(arch)
        if "fog" in d:
            fog = dict(d["fog"])
            if "airlight" in fog:
                fog["airlight"] = tuple(fog["airlight"])
            d["fog"] = FogParams(**fog)
        return cls(**d)

    def with_overrides(self, **kw: Any) -> "TrainConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "num_classes" in kw and "arch" not in kw:
            kw["arch"] = replace(self.arch, num_classes=kw["num_classes"])
        return replace(self, **kw)

    def model_hash(self) -> str:
        """Hash of everything that determines parameter shapes."""
        payload = {"arch": self.arch.to_dict(), "adaptation": self.adaptation}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: Optional[Path], base: Optional[TrainConfig] = None, **overrides) -> TrainConfig:
    """Read a JSON config over ``base`` (default :class:`TrainConfig`); keyword overrides win."""
    cfg = base or TrainConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgumentError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidArgumentError(f"config {path} must hold a JSON object")
        merged = cfg.to_dict()
        merged.update(data)
        try:
            cfg = TrainConfig.from_dict(merged)
        except TypeError as exc:
            raise InvalidArgumentError(f"bad config {path}: {exc}") from exc
    return cfg.with_overrides(**overrides)


def save_config(cfg: TrainConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def desk_config(**kw: Any) -> TrainConfig:
    """Settings for the CPU-scale synthetic-shapes experiments.

    Auxiliary adaptation weights are scaled down and the pseudo-label threshold
    lowered so that the small network's teacher yields enough foggy-view labels.
    """
    base = dict(arch=ArchConfig.desk(kw.get("num_classes", 6)), optimizer="sgd", lr=0.05,
                momentum=0.9, lr_milestones=(8,), fog=FogParams(beta=0.12, airlight=(0.8, 0.8, 0.8), default_depth=15.0),
                loss_weights=LossWeights(w_adv=0.01, w_depth=0.01, w_rec=0.01, w_cons=0.5, reg_strength=1e-4),
                pseudo=PseudoLabelConfig(confidence_threshold=0.6, ema_momentum=0.99))
    base.update(kw)
    return TrainConfig(**base)
