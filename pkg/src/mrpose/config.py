"""Training configuration, presets and the step learning-rate schedule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .architectures import ArchitectureSpec, ConfigError
from .data.loader import AugmentationConfig


@dataclass
class TrainConfig:
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    # {"synthetic": {...SyntheticConfig fields}} | {"manifest": path} | {"annotations": path}
    data: dict = field(default_factory=lambda: {"synthetic": {}})
    base_lr: float = 1e-3
    lr_drop_epochs: List[int] = field(default_factory=lambda: [120, 150])
    lr_drop_factor: float = 10.0  # lr is divided by this at every drop
    total_epochs: int = 170
    batch_size: int = 64
    seed: int = 0
    checkpoint_dir: Optional[str] = None
    eval_every: int = 1
    val_metric: str = "pck"  # pck | pckh | oks-ap
    pck_threshold: float = 0.2
    oks_falloff: Optional[List[float]] = None  # None -> uniform 0.1
    workers: int = 1
    record_wall_time: bool = True

    def __post_init__(self):
        if isinstance(self.arch, dict):
            self.arch = ArchitectureSpec.from_dict(self.arch)
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig.from_dict(self.augmentation)
        self.lr_drop_epochs = [int(e) for e in self.lr_drop_epochs]
        if self.base_lr <= 0 or self.lr_drop_factor <= 0:
            raise ConfigError("base_lr and lr_drop_factor must be positive")
        if self.total_epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("total_epochs, batch_size and eval_every must be >= 1")
        if sorted(set(self.lr_drop_epochs)) != self.lr_drop_epochs:
            raise ConfigError("lr_drop_epochs must be strictly increasing")
        if self.val_metric not in ("pck", "pckh", "oks-ap"):
            raise ConfigError(f"unknown val_metric {self.val_metric!r}")
        if tuple(self.augmentation.crop_size) != tuple(self.arch.input_size):
            raise ConfigError(
                f"augmentation crop_size {self.augmentation.crop_size} must equal "
                f"arch input_size {self.arch.input_size}"
            )

    # ------------------------------------------------------------------ io
    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "augmentation": self.augmentation.to_dict(),
            "data": self.data,
            "base_lr": self.base_lr,
            "lr_drop_epochs": list(self.lr_drop_epochs),
            "lr_drop_factor": self.lr_drop_factor,
            "total_epochs": self.total_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "checkpoint_dir": self.checkpoint_dir,
            "eval_every": self.eval_every,
            "val_metric": self.val_metric,
            "pck_threshold": self.pck_threshold,
            "oks_falloff": self.oks_falloff,
            "workers": self.workers,
            "record_wall_time": self.record_wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__) - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = PRESETS[d["preset"]]().to_dict() if "preset" in d else {}
        for key, value in d.items():
            if key in ("arch", "augmentation") and key in base:
                base[key] = {**base[key], **value}
            elif key != "preset":
                base[key] = value
        try:
            return cls(**base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Piecewise-constant lr: base_lr, divided by lr_drop_factor at each drop epoch."""
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    drops = sum(1 for e in config.lr_drop_epochs if epoch >= e)
    return config.base_lr / config.lr_drop_factor**drops


# ----------------------------------------------------------------------------
# presets


def coco_preset() -> TrainConfig:
    return TrainConfig(
        arch=ArchitectureSpec(variant="mrfea2", base_channels=256, num_keypoints=17,
                              stage_depths=(3, 4, 6, 3), input_size=(256, 192)),
        augmentation=AugmentationConfig.coco(),
        data={"annotations": "person_keypoints_train2017.json"},
        lr_drop_epochs=[120, 150], total_epochs=170, batch_size=64,
        val_metric="oks-ap",
    )


def mpii_preset() -> TrainConfig:
    return TrainConfig(
        arch=ArchitectureSpec(variant="mrfea1", base_channels=256, num_keypoints=16,
                              stage_depths=(3, 4, 6, 3), input_size=(256, 256)),
        augmentation=AugmentationConfig.mpii(),
        data={"annotations": "mpii_train.json"},
        lr_drop_epochs=[90, 120], total_epochs=140, batch_size=64,
        val_metric="pckh",
    )


def desk_preset(variant: str = "baseline") -> TrainConfig:
    """Synthetic 12-joint figures, 128x96 crops, C=8, 30 epochs at lr 5e-3."""
    return TrainConfig(
        arch=ArchitectureSpec(variant=variant, base_channels=8, num_keypoints=12,
                              stage_depths=(2, 2, 2, 2), input_size=(128, 96),
                              head_init_std=0.001),
        # 30 short epochs at C=8: geometric augmentation costs more than it buys
        augmentation=AugmentationConfig(rotation_max=15.0, scale_max=0.15, flip_prob=0.0,
                                        crop_size=(128, 96), enabled=False, sigma=3.0),
        data={"synthetic": {"n_train": 500, "n_val": 100}},
        base_lr=5e-3, lr_drop_epochs=[20, 26], total_epochs=30, batch_size=16,
        val_metric="pck", pck_threshold=0.2,
    )


PRESETS = {"coco": coco_preset, "mpii": mpii_preset, "desk": desk_preset}
