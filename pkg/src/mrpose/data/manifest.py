"""Dataset manifest: person records, skeleton and provenance, stored as JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..metrics import PersonInstance
from ..pgm import read_pgm
from .skeleton import Skeleton


@dataclass
class Record:
    instance: PersonInstance
    split: str = "train"
    image_path: Optional[str] = None
    raster: Optional[np.ndarray] = None  # embedded 8-bit greyscale image

    def load_image(self, root: Optional[Path] = None) -> np.ndarray:
        if self.raster is not None:
            return self.raster
        if self.image_path is None:
            raise FileNotFoundError(f"record {self.instance.instance_id} has no image")
        path = Path(self.image_path)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        try:
            return read_pgm(path)
        except (OSError, ValueError) as exc:
            raise FileNotFoundError(f"cannot read image {path}: {exc}") from exc


@dataclass
class DatasetManifest:
    records: List[Record]
    skeleton: Skeleton
    seed: Optional[int] = None
    root: Optional[Path] = None
    config: dict = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        for i, rec in enumerate(self.records):
            if rec.instance.keypoints.shape[0] != self.skeleton.k:
                raise ValueError(f"record {i}: keypoint count {rec.instance.keypoints.shape[0]} "
                                 f"!= skeleton k={self.skeleton.k}")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, tag: str) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if r.split == tag], self.skeleton,
                               self.seed, self.root, dict(self.config))

    @property
    def instances(self) -> List[PersonInstance]:
        return [r.instance for r in self.records]

    def to_dict(self) -> dict:
        images, instances, seen = [], [], {}
        for rec in self.records:
            inst = rec.instance
            if inst.image_id not in seen:
                seen[inst.image_id] = True
                entry = {"id": inst.image_id, "file": rec.image_path}
                if rec.raster is not None:
                    entry["height"], entry["width"] = (int(s) for s in rec.raster.shape)
                images.append(entry)
            instances.append({
                "id": inst.instance_id,
                "image_id": inst.image_id,
                "keypoints": [round(float(v), 4) for v in inst.keypoints.reshape(-1)],
                "box": [round(float(v), 4) for v in inst.box],
                "head_size": None if inst.head_size is None else round(float(inst.head_size), 4),
                "scale": inst.scale,
                "split": rec.split,
            })
        return {
            "seed": self.seed,
            "skeleton": self.skeleton.to_dict(),
            "config": self.config,
            "images": images,
            "instances": instances,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed manifest JSON: {exc}") from exc
        skeleton = Skeleton.from_dict(doc["skeleton"])
        files = {img["id"]: img.get("file") for img in doc.get("images", [])}
        records = []
        for i, inst in enumerate(doc.get("instances", [])):
            try:
                person = PersonInstance(
                    keypoints=np.asarray(inst["keypoints"], dtype=np.float64).reshape(-1, 3),
                    box=inst["box"],
                    image_id=inst["image_id"],
                    instance_id=inst.get("id", i),
                    scale=inst.get("scale"),
                    head_size=inst.get("head_size"),
                    torso=skeleton.torso,
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: instance record {i} is malformed: {exc}") from exc
            records.append(Record(person, inst.get("split", "train"), files.get(inst["image_id"])))
        return cls(records, skeleton, doc.get("seed"), path.parent, doc.get("config", {}))
