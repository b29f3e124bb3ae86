"""Keypoint <-> heatmap conversion, the heatmap MSE loss and quarter-offset decoding."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .nn.tensor import ShapeError, Tensor
from .pgm import heatmap_to_pgm

HEATMAP_STRIDE = 4


def default_sigma(heatmap_size: Tuple[int, int]) -> float:
    """Two cells at a 64x48 output, scaled with the output height."""
    return 2.0 * heatmap_size[0] / 64.0


def encode_heatmaps(
    keypoints: np.ndarray,
    heatmap_size: Tuple[int, int],
    sigma: Optional[float] = None,
    stride: int = HEATMAP_STRIDE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian target maps for crop-frame keypoints.

    keypoints: (k, 3) array of (x, y, v) in crop pixels.
    heatmap_size: (h, w).

    Each Gaussian is centred on the sub-cell keypoint position and rescaled
    so that the nearest cell holds exactly 1; unlabeled keypoints and ones
    whose nearest cell falls off the grid get a zero map and weight 0.
    """
    kps = np.asarray(keypoints, dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 3:
        raise ShapeError(f"keypoints must be (k, 3), got {kps.shape}")
    h, w = heatmap_size
    sigma = default_sigma(heatmap_size) if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = kps.shape[0]
    maps = np.zeros((k, h, w), dtype=np.float32)
    weights = np.zeros(k, dtype=np.float32)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    for i, (x, y, v) in enumerate(kps):
        if v <= 0 or not (np.isfinite(x) and np.isfinite(y)):
            continue
        mx, my = x / stride, y / stride
        cx, cy = np.rint(mx), np.rint(my)
        if not (0 <= cx < w and 0 <= cy < h):
            continue
        gx = np.exp(-((xs - mx) ** 2 - (cx - mx) ** 2) / (2 * sigma**2))
        gy = np.exp(-((ys - my) ** 2 - (cy - my) ** 2) / (2 * sigma**2))
        maps[i] = np.minimum(np.outer(gy, gx), 1.0)
        weights[i] = 1.0
    return maps, weights


def joints_loss(pred: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean over labeled keypoints of the per-map mean squared error.

    pred: (n, k, h, w) tensor; target: same shape; weights: (n, k) in {0, 1}.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"joints_loss: pred {pred.shape} vs target {target.shape}")
    n, k, h, w = pred.shape
    wts = np.asarray(weights, dtype=pred.dtype).reshape(n, k)
    active = float(wts.sum())
    if active == 0:
        warnings.warn("joints_loss: every keypoint weight is zero; loss defined as 0",
                      RuntimeWarning, stacklevel=2)
    diff = pred.data - target.astype(pred.dtype, copy=False)
    mask = wts[:, :, None, None]
    denom = active * h * w
    value = float((diff * diff * mask).sum() / denom) if active else 0.0

    def backward(g: np.ndarray) -> None:
        if active:
            pred.accumulate(g * (2.0 / denom) * diff * mask)

    return Tensor(np.asarray(value, dtype=pred.dtype), requires_grad=pred.requires_grad,
                  parents=(pred,) if pred.requires_grad else (),
                  backward=backward if pred.requires_grad else None, op="joints_loss")


def downsample_targets(target: np.ndarray, factor: int) -> np.ndarray:
    """Block max-pool target heatmaps by ``factor`` (keeps peaks at 1)."""
    n, k, h, w = target.shape
    return target.reshape(n, k, h // factor, factor, w // factor, factor).max(axis=(3, 5))


_NEIGHBOURS = ((-1, 0), (0, -1), (0, 1), (1, 0))  # row-major scan order (dy, dx)


def _peak_and_runner_up(hm: np.ndarray, mode: str):
    h, w = hm.shape
    flat = hm.reshape(-1)
    top = int(np.argmax(flat))
    py, px = divmod(top, w)
    if mode == "global":
        rest = flat.copy()
        rest[top] = -np.inf
        sy, sx = divmod(int(np.argmax(rest)), w)
    elif mode == "neighbor":
        best, sy, sx = -np.inf, py, px
        for dy, dx in _NEIGHBOURS:
            qy, qx = py + dy, px + dx
            if 0 <= qy < h and 0 <= qx < w and hm[qy, qx] > best:
                best, sy, sx = hm[qy, qx], qy, qx
    else:
        raise ValueError(f"unknown second-peak mode {mode!r}")
    return (px, py), (sx, sy)


def decode_heatmaps(heatmaps: np.ndarray, mode: str = "global"):
    """Heatmap-frame locations by argmax plus a quarter-cell shift.

    The shift is 0.25 along each axis toward the second-highest response.
    Returns (coords (k, 2) as (x, y), confidences (k,), degenerate (k,) bool);
    a constant map decodes to the grid centre and is flagged degenerate.
    """
    hms = np.asarray(heatmaps)
    if hms.ndim != 3:
        raise ShapeError(f"heatmaps must be (k, h, w), got {hms.shape}")
    k, h, w = hms.shape
    if h < 2 or w < 2:
        raise ShapeError("decode needs at least a 2x2 heatmap")
    coords = np.zeros((k, 2), dtype=np.float64)
    conf = np.zeros(k, dtype=np.float64)
    degenerate = np.zeros(k, dtype=bool)
    for i in range(k):
        hm = hms[i]
        peak = float(hm.max())
        conf[i] = peak
        if peak == float(hm.min()):
            coords[i] = ((w - 1) / 2.0, (h - 1) / 2.0)
            degenerate[i] = True
            continue
        (px, py), (sx, sy) = _peak_and_runner_up(hm, mode)
        coords[i] = (px + 0.25 * np.sign(sx - px), py + 0.25 * np.sign(sy - py))
    return coords, conf, degenerate


def apply_affine(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


def decode_keypoints(
    heatmaps: np.ndarray,
    crop_to_original: Optional[np.ndarray] = None,
    mode: str = "global",
    stride: int = HEATMAP_STRIDE,
):
    """Decode one heatmap stack to keypoints in the original image frame.

    ``crop_to_original`` is a 2x3 affine; None keeps crop coordinates.
    Returns (keypoints (k, 2), confidences (k,), degenerate (k,)).
    """
    coords, conf, degenerate = decode_heatmaps(heatmaps, mode)
    crop = coords * stride
    if crop_to_original is not None:
        crop = apply_affine(crop_to_original, crop)
    return crop, conf, degenerate


def export_heatmaps(heatmaps: np.ndarray, out_dir, prefix: str = "heatmap") -> list:
    """Write one PGM per keypoint channel; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, hm in enumerate(np.asarray(heatmaps)):
        path = out_dir / f"{prefix}_{i:02d}.pgm"
        heatmap_to_pgm(path, hm)
        paths.append(path)
    return paths
