"""Reader for the COCO person-keypoints annotation subset."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..metrics import PersonInstance
from .manifest import DatasetManifest, Record
from .skeleton import Skeleton, coco17


def load_keypoint_annotations(path, skeleton: Optional[Skeleton] = None,
                              split: str = "val", image_root=None) -> DatasetManifest:
    """One record per annotation; annotations without a box are skipped and counted.

    Images are resolved relative to ``image_root`` (default: the JSON's directory).
    """
    path = Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "annotations" not in doc:
        raise ValueError(f"{path}: missing 'annotations' list")
    skeleton = skeleton or coco17()
    k = skeleton.k
    files = {}
    for i, img in enumerate(doc.get("images", [])):
        if "id" not in img:
            raise ValueError(f"{path}: image record {i} has no 'id'")
        files[img["id"]] = img.get("file_name")
    records, skipped = [], 0
    for i, ann in enumerate(doc["annotations"]):
        if not isinstance(ann, dict) or "keypoints" not in ann or "image_id" not in ann:
            raise ValueError(f"{path}: annotation record {i} lacks 'keypoints' or 'image_id'")
        triples = ann["keypoints"]
        if len(triples) != 3 * k:
            raise ValueError(
                f"{path}: annotation record {i} has {len(triples)} keypoint values, "
                f"expected 3*k = {3 * k}"
            )
        box = ann.get("bbox")
        if not box or len(box) != 4 or box[2] <= 0 or box[3] <= 0:
            skipped += 1
            continue
        person = PersonInstance(
            keypoints=np.asarray(triples, dtype=np.float64).reshape(k, 3),
            box=box,
            image_id=ann["image_id"],
            instance_id=ann.get("id", i),
            head_size=ann.get("head_size"),
            torso=skeleton.torso,
        )
        records.append(Record(person, split, files.get(ann["image_id"])))
    manifest = DatasetManifest(records, skeleton, root=Path(image_root) if image_root else path.parent)
    manifest.skipped = skipped
    return manifest
