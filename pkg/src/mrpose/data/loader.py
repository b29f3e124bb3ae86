"""Batching: box expansion, augmentation, cropping, normalisation, target encoding."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..heatmap import encode_heatmaps
from ..metrics import PersonInstance
from .manifest import DatasetManifest
from .transforms import CropTransform, crop_affine, expand_box_to_aspect


@dataclass
class AugmentationConfig:
    rotation_max: float = 30.0  # degrees
    scale_max: float = 0.4  # fraction
    flip_prob: float = 0.5
    crop_size: Tuple[int, int] = (256, 192)  # (H, W)
    aspect_ratio: float = 4.0 / 3.0  # h / w
    enabled: bool = True
    mean: float = 0.5
    std: float = 0.25
    sigma: Optional[float] = None  # heatmap Gaussian, None = scaled default

    def __post_init__(self):
        self.crop_size = tuple(self.crop_size)

    @classmethod
    def coco(cls, **kw) -> "AugmentationConfig":
        return cls(**{"rotation_max": 30.0, "scale_max": 0.4, "crop_size": (256, 192),
                      "aspect_ratio": 4.0 / 3.0, **kw})

    @classmethod
    def mpii(cls, **kw) -> "AugmentationConfig":
        return cls(**{"rotation_max": 30.0, "scale_max": 0.25, "crop_size": (256, 256),
                      "aspect_ratio": 1.0, **kw})

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop_size"] = list(self.crop_size)
        return d

    @property
    def heatmap_size(self) -> Tuple[int, int]:
        return self.crop_size[0] // 4, self.crop_size[1] // 4


@dataclass
class Batch:
    images: np.ndarray  # (n, 3, H, W) float32
    targets: np.ndarray  # (n, k, H/4, W/4)
    weights: np.ndarray  # (n, k)
    instances: List[PersonInstance]
    transforms: List[CropTransform]


def normalise(raster: np.ndarray, mean: float, std: float) -> np.ndarray:
    """8-bit greyscale (H, W) -> (3, H, W) float32 with (v/255 - mean)/std."""
    x = (np.asarray(raster, dtype=np.float32) / 255.0 - mean) / std
    return np.repeat(x[None], 3, axis=0)


def prepare_item(manifest: DatasetManifest, index: int, aug: AugmentationConfig,
                 rng: Optional[np.random.Generator]):
    """Expand, (augment,) crop and encode one record."""
    rec = manifest.records[index]
    inst = rec.instance
    image = rec.load_image(manifest.root)
    box = expand_box_to_aspect(inst.box, aug.aspect_ratio)
    rot, scale, flip = 0.0, 1.0, False
    if aug.enabled and rng is not None:
        scale = rng.uniform(1.0 - aug.scale_max, 1.0 + aug.scale_max)
        rot = rng.uniform(-aug.rotation_max, aug.rotation_max)
        flip = bool(rng.uniform() < aug.flip_prob)
    crop, transform, kps = crop_affine(
        image.astype(np.float64), box, inst.keypoints, aug.crop_size, rot, scale, flip,
        manifest.skeleton.flip_permutation(), fill=float(np.median(image)),
    )
    target, weight = encode_heatmaps(kps, aug.heatmap_size, aug.sigma)
    return normalise(crop, aug.mean, aug.std), target, weight, transform


def batch_iterator(manifest: DatasetManifest, batch_size: int, seed: int = 0, epoch: int = 0,
                   augmentation: Optional[AugmentationConfig] = None, shuffle: bool = True,
                   workers: int = 1) -> Iterator[Batch]:
    """Yield batches for one epoch; the final partial batch is emitted.

    Order and augmentation draws depend only on (seed, epoch, position), so
    any worker count produces the same stream.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(manifest) == 0:
        raise ValueError("batch_iterator: empty manifest")
    aug = augmentation or AugmentationConfig(enabled=False)
    order = np.arange(len(manifest))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(manifest))

    def make(pos: int):
        rng = np.random.default_rng([seed, epoch, pos]) if aug.enabled else None
        return prepare_item(manifest, int(order[pos]), aug, rng)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for start in range(0, len(order), batch_size):
            positions = range(start, min(start + batch_size, len(order)))
            items = list(pool.map(make, positions)) if pool else [make(p) for p in positions]
            yield Batch(
                images=np.stack([it[0] for it in items]),
                targets=np.stack([it[1] for it in items]),
                weights=np.stack([it[2] for it in items]),
                instances=[manifest.records[int(order[p])].instance for p in positions],
                transforms=[it[3] for it in items],
            )
    finally:
        if pool:
            pool.shutdown()
