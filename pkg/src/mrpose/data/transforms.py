"""Box expansion and the affine crop used for training and testing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage


def expand_box_to_aspect(box, ratio: float = 4.0 / 3.0) -> Tuple[float, float, float, float]:
    """Grow (x, y, w, h) about its centre until h / w == ratio; never shrinks."""
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"box dimensions must be positive, got {w}x{h}")
    cx, cy = x + w / 2.0, y + h / 2.0
    if h < w * ratio:
        h = w * ratio
    elif h > w * ratio:
        w = h / ratio
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def _to3x3(m: np.ndarray) -> np.ndarray:
    return np.vstack([m, [0.0, 0.0, 1.0]])


@dataclass
class CropTransform:
    """Affine map original -> crop (2x3) together with its inverse."""

    matrix: np.ndarray
    out_size: Tuple[int, int]  # (H, W)
    flipped: bool = False

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(_to3x3(self.matrix))[:2]

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def apply_inverse(self, points) -> np.ndarray:
        inv = self.inverse
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return pts @ inv[:, :2].T + inv[:, 2]


def crop_matrix(box, out_size: Tuple[int, int], rotation: float = 0.0, scale: float = 1.0,
                flip: bool = False) -> CropTransform:
    """Affine taking the scaled, rotated box onto an out_size canvas.

    The box centre goes to the canvas centre and box corners to canvas
    corners (for rotation 0, scale 1).  ``rotation`` is in degrees;
    ``flip`` mirrors the canvas with x -> W - 1 - x.
    """
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0 or scale <= 0:
        raise ValueError("crop_matrix: degenerate box or non-positive scale")
    out_h, out_w = out_size
    cx, cy = x + w / 2.0, y + h / 2.0
    s = out_w / (w * scale)
    t = math.radians(rotation)
    c, sn = math.cos(t), math.sin(t)
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    rot_scale = np.array([[s * c, s * sn, 0], [-s * sn, s * c, 0], [0, 0, 1]], dtype=np.float64)
    to_canvas = np.array([[1, 0, out_w / 2.0], [0, 1, out_h / 2.0], [0, 0, 1]], dtype=np.float64)
    m = to_canvas @ rot_scale @ to_origin
    if flip:
        mirror = np.array([[-1, 0, out_w - 1], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
        m = mirror @ m
    return CropTransform(m[:2], (out_h, out_w), flip)


def warp_image(image: np.ndarray, transform: CropTransform, fill: float = 0.0) -> np.ndarray:
    """Bilinear resampling of a (H, W) or (H, W, C) image onto the crop canvas."""
    out_h, out_w = transform.out_size
    inv = transform.inverse
    jy, jx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    src_x = inv[0, 0] * jx + inv[0, 1] * jy + inv[0, 2]
    src_y = inv[1, 0] * jx + inv[1, 1] * jy + inv[1, 2]
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return ndimage.map_coordinates(img, [src_y, src_x], order=1, mode="constant", cval=fill)
    return np.stack(
        [ndimage.map_coordinates(img[..., ch], [src_y, src_x], order=1, mode="constant", cval=fill)
         for ch in range(img.shape[2])],
        axis=-1,
    )


def transform_keypoints(keypoints: np.ndarray, transform: CropTransform,
                        flip_perm: Optional[Sequence[int]] = None) -> np.ndarray:
    """Map (k, 3) keypoints into the crop; off-canvas ones are demoted to v = 0."""
    kps = np.array(keypoints, dtype=np.float64, copy=True)
    kps[:, :2] = transform.apply(kps[:, :2])
    if transform.flipped and flip_perm is not None:
        kps = kps[list(flip_perm)]
    out_h, out_w = transform.out_size
    outside = (kps[:, 0] < 0) | (kps[:, 0] > out_w - 1) | (kps[:, 1] < 0) | (kps[:, 1] > out_h - 1)
    kps[outside, 2] = 0
    return kps


def flip_keypoints(keypoints: np.ndarray, width: int, flip_perm: Sequence[int]) -> np.ndarray:
    """Mirror x -> width - 1 - x and swap left/right joints."""
    kps = np.array(keypoints, dtype=np.float64, copy=True)
    kps[:, 0] = width - 1 - kps[:, 0]
    return kps[list(flip_perm)]


def crop_affine(image: np.ndarray, box, keypoints: np.ndarray, out_size: Tuple[int, int],
                rotation: float = 0.0, scale: float = 1.0, flip: bool = False,
                flip_perm: Optional[Sequence[int]] = None, fill: float = 0.0):
    """Crop + rotate + scale (+ mirror) an image and its keypoints together.

    Returns (crop, CropTransform, crop-frame keypoints).
    """
    t = crop_matrix(box, out_size, rotation, scale, flip)
    crop = warp_image(image, t, fill)
    kps = transform_keypoints(keypoints, t, flip_perm)
    return crop, t, kps
