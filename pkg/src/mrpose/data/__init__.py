"""Datasets, crop geometry and batching."""

from .coco import load_keypoint_annotations
from .loader import AugmentationConfig, Batch, batch_iterator, normalise, prepare_item
from .manifest import DatasetManifest, Record
from .skeleton import Skeleton, coco17, get_skeleton, mpii16, synthetic12
from .synthetic import SyntheticConfig, generate_synthetic_dataset
from .transforms import (
    CropTransform,
    crop_affine,
    crop_matrix,
    expand_box_to_aspect,
    flip_keypoints,
    transform_keypoints,
    warp_image,
)

__all__ = [
    "AugmentationConfig", "Batch", "CropTransform", "DatasetManifest", "Record", "Skeleton",
    "SyntheticConfig", "batch_iterator", "coco17", "crop_affine", "crop_matrix",
    "expand_box_to_aspect", "flip_keypoints", "generate_synthetic_dataset", "get_skeleton",
    "load_keypoint_annotations", "mpii16", "normalise", "prepare_item", "synthetic12",
    "transform_keypoints", "warp_image",
]
