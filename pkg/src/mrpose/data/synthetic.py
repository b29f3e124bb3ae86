"""Synthetic stick-figure people with exact keypoint ground truth.

Figures face the camera: the person's right side is drawn light and the
left side dark, so left/right identity is visible in the pixels.  Images
are 8-bit greyscale over a smooth textured background.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from ..metrics import PersonInstance
from ..pgm import write_pgm
from .manifest import DatasetManifest, Record
from .skeleton import get_skeleton

RIGHT_TONE = 0.97
LEFT_TONE = 0.05
BODY_TONE = 0.78


@dataclass
class SyntheticConfig:
    n_train: int = 500
    n_val: int = 100
    image_size: Tuple[int, int] = (128, 128)  # (H, W)
    figure_height: Tuple[float, float] = (70.0, 110.0)
    occlusion_rate: float = 0.05
    drop_rate: float = 0.02
    skeleton: str = "synthetic12"

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        self.figure_height = tuple(self.figure_height)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _direction(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def _stroke(img: np.ndarray, p0, p1, width: float, tone: float) -> None:
    """Anti-aliased capsule from p0 to p1 blended onto img in place."""
    h, w = img.shape
    half = width / 2.0
    x0 = int(max(0, math.floor(min(p0[0], p1[0]) - half - 1)))
    x1 = int(min(w, math.ceil(max(p0[0], p1[0]) + half + 2)))
    y0 = int(max(0, math.floor(min(p0[1], p1[1]) - half - 1)))
    y1 = int(min(h, math.ceil(max(p0[1], p1[1]) + half + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    a = np.asarray(p0, dtype=np.float64)
    seg = np.asarray(p1, dtype=np.float64) - a
    length2 = float(seg @ seg)
    if length2 > 0:
        t = np.clip(((xs - a[0]) * seg[0] + (ys - a[1]) * seg[1]) / length2, 0.0, 1.0)
    else:
        t = np.zeros_like(xs)
    dist = np.hypot(xs - (a[0] + t * seg[0]), ys - (a[1] + t * seg[1]))
    cover = np.clip(half + 0.5 - dist, 0.0, 1.0)
    patch = img[y0:y1, x0:x1]
    patch *= 1.0 - cover
    patch += tone * cover


def _background(rng: np.random.Generator, size: Tuple[int, int]) -> np.ndarray:
    coarse = ndimage.gaussian_filter(rng.standard_normal(size), sigma=rng.uniform(4.0, 10.0))
    coarse = (coarse - coarse.min()) / max(np.ptp(coarse), 1e-9)
    return 0.3 + 0.4 * coarse


def _pose(rng: np.random.Generator, torso: float):
    """Joint positions relative to the pelvis, plus feet and head circle."""
    lean = rng.uniform(-15.0, 15.0)
    up = _direction(-90.0 + lean)
    side = _direction(lean)  # points to image right
    pelvis = np.zeros(2)
    neck = pelvis + torso * up
    head_dir = _direction(-90.0 + lean + rng.uniform(-20.0, 20.0))
    head_radius = 0.25 * torso
    head_centre = neck + 0.33 * torso * head_dir
    head_top = head_centre + head_radius * head_dir

    joints = {"head_top": head_top, "neck": neck}
    feet = {}
    for name, sgn in (("right", -1.0), ("left", 1.0)):
        # sgn = -1 puts the joint on the image-left side, i.e. the person's right
        sho = neck + sgn * 0.42 * torso * side
        arm = 90.0 + lean - sgn * rng.uniform(0.0, 150.0)
        elbow = sho + 0.5 * torso * _direction(arm)
        wrist = elbow + 0.45 * torso * _direction(arm + rng.uniform(-100.0, 100.0))
        hip = pelvis + sgn * 0.25 * torso * side
        leg = 90.0 + lean - sgn * rng.uniform(-15.0, 45.0)
        knee = hip + 0.75 * torso * _direction(leg)
        feet[name] = knee + 0.7 * torso * _direction(leg + rng.uniform(-60.0, 60.0))
        joints.update({f"{name}_shoulder": sho, f"{name}_elbow": elbow, f"{name}_wrist": wrist,
                       f"{name}_hip": hip, f"{name}_knee": knee})
    return joints, feet, (head_centre, head_radius), pelvis


def render_figure(rng: np.random.Generator, cfg: SyntheticConfig, names, keep=()):
    """Render one person; returns (uint8 image, (k, 3) keypoints, box, head size).

    Joints listed in ``keep`` may be occluded but are never dropped.
    """
    h, w = cfg.image_size
    torso = rng.uniform(*cfg.figure_height) / 3.0
    joints, feet, (head_c, head_r), pelvis = _pose(rng, torso)

    pts = np.array(list(joints.values()) + list(feet.values()))
    lo = np.minimum(pts.min(axis=0), head_c - head_r)
    hi = np.maximum(pts.max(axis=0), head_c + head_r)
    margin = 3.0
    span = hi - lo
    offset = np.array([
        rng.uniform(margin, max(margin, w - margin - span[0])) - lo[0],
        rng.uniform(margin, max(margin, h - margin - span[1])) - lo[1],
    ])
    joints = {k: v + offset for k, v in joints.items()}
    feet = {k: v + offset for k, v in feet.items()}
    head_c = head_c + offset
    pelvis = pelvis + offset
    lo, hi = lo + offset, hi + offset

    img = _background(rng, (h, w))
    limb = 0.13 * torso
    j = joints
    # far (left) side first, then body, then near (right) side
    for tone, name in ((LEFT_TONE, "left"), (None, None), (RIGHT_TONE, "right")):
        if name is None:
            _stroke(img, pelvis, j["neck"], 0.45 * torso, BODY_TONE)
            _stroke(img, j["right_shoulder"], j["left_shoulder"], limb * 1.2, BODY_TONE)
            _stroke(img, j["right_hip"], j["left_hip"], limb * 1.2, BODY_TONE)
            _stroke(img, j["neck"], head_c, limb, BODY_TONE)
            _stroke(img, head_c, head_c, 2 * head_r, BODY_TONE)
            continue
        _stroke(img, j[f"{name}_shoulder"], j[f"{name}_elbow"], limb, tone)
        _stroke(img, j[f"{name}_elbow"], j[f"{name}_wrist"], limb, tone)
        _stroke(img, j[f"{name}_hip"], j[f"{name}_knee"], limb * 1.2, tone)
        _stroke(img, j[f"{name}_knee"], feet[name], limb, tone)
        # hands make the wrist end of each arm recognisable
        _stroke(img, j[f"{name}_wrist"], j[f"{name}_wrist"], limb * 2.2, tone)

    kps = np.zeros((len(names), 3))
    for i, n in enumerate(names):
        kps[i] = (*joints[n], 2)
    for i in range(len(names)):
        u = rng.uniform()
        if u < cfg.occlusion_rate:
            kps[i, 2] = 1
            side = 0.45 * torso
            x, y = kps[i, :2]
            ys = slice(int(max(0, y - side / 2)), int(min(h, y + side / 2 + 1)))
            xs = slice(int(max(0, x - side / 2)), int(min(w, x + side / 2 + 1)))
            img[ys, xs] = rng.uniform(0.35, 0.65, size=img[ys, xs].shape)
        elif u < cfg.occlusion_rate + cfg.drop_rate and i not in keep:
            kps[i] = 0
    img += rng.normal(0.0, 0.03, size=img.shape)
    raster = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)

    pad = 0.05 * (hi - lo)
    x0, y0 = np.maximum(lo - pad, 0.0)
    x1, y1 = np.minimum(hi + pad, [w - 1.0, h - 1.0])
    box = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
    head_size = float(np.linalg.norm(joints["head_top"] - joints["neck"]))
    return raster, kps, box, head_size


def generate_synthetic_dataset(config: Optional[SyntheticConfig] = None, seed: int = 0,
                               out_dir=None) -> DatasetManifest:
    """Deterministic train/val stick-figure dataset.

    Image i is drawn from its own generator seeded by (seed, i), so the
    dataset is reproducible and independent of generation order.  With
    ``out_dir`` the rasters are written as PGM files next to manifest.json;
    otherwise they are embedded in the records.
    """
    cfg = config or SyntheticConfig()
    skeleton = get_skeleton(cfg.skeleton)
    names = skeleton.joint_names
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(cfg.n_train + cfg.n_val):
        rng = np.random.default_rng([seed, i])
        raster, kps, box, head_size = render_figure(rng, cfg, names, keep=skeleton.torso)
        kps[:, :2] = np.round(kps[:, :2], 4)
        box = tuple(round(v, 4) for v in box)
        person = PersonInstance(kps, box, image_id=i, instance_id=i, head_size=round(head_size, 4),
                                torso=skeleton.torso)
        split = "train" if i < cfg.n_train else "val"
        rec = Record(person, split, raster=raster)
        if out is not None:
            rel = f"images/{i:05d}.pgm"
            write_pgm(out / rel, raster)
            rec.image_path = rel
        records.append(rec)
    manifest = DatasetManifest(records, skeleton, seed=seed, root=out,
                               config={"synthetic": asdict(cfg)})
    if out is not None:
        manifest.save(out / "manifest.json")
    return manifest
