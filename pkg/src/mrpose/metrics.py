"""OKS-based AP/AR and PCK/PCKh evaluation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

PCKH_GROUPS = ("head", "shoulder", "elbow", "wrist", "hip", "knee", "ankle")
PCKH_HEADER = ("Hea", "Sho", "Elb", "Wri", "Hip", "Kne", "Ank", "Total")


def default_thresholds() -> np.ndarray:
    return np.round(np.arange(0.50, 0.951, 0.05), 2)


@dataclass
class OKSConfig:
    falloff: np.ndarray
    thresholds: np.ndarray = field(default_factory=default_thresholds)
    area_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        self.falloff = np.asarray(self.falloff, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(self.falloff <= 0):
            raise ValueError("falloff constants must be positive")
        t = self.thresholds
        if t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1:
            raise ValueError("thresholds must be strictly increasing within (0, 1]")

    @classmethod
    def uniform(cls, k: int, value: float = 0.1, **kw) -> "OKSConfig":
        return cls(np.full(k, value), **kw)


@dataclass
class PersonInstance:
    """Ground truth for one person; ``keypoints`` is (k, 3) of (x, y, v)."""

    keypoints: np.ndarray
    box: Tuple[float, float, float, float]
    image_id: object = 0
    instance_id: int = 0
    scale: Optional[float] = None
    head_size: Optional[float] = None
    torso: Tuple[int, int] = (0, 0)  # (right hip, left shoulder)
    image: Optional[str] = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.box = tuple(float(b) for b in self.box)

    @property
    def object_scale(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        return math.sqrt(max(self.box[2], 0.0) * max(self.box[3], 0.0))

    @property
    def area(self) -> float:
        return self.box[2] * self.box[3]

    @property
    def labeled(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0


def _xy(pred) -> np.ndarray:
    return np.asarray(pred, dtype=np.float64).reshape(len(pred), -1)[:, :2]


def oks(pred, gt: PersonInstance, cfg: OKSConfig) -> Optional[float]:
    """Object keypoint similarity; None when no ground-truth keypoint is labeled."""
    p = _xy(pred)
    if p.shape[0] != gt.keypoints.shape[0]:
        raise ValueError(f"oks: {p.shape[0]} predicted vs {gt.keypoints.shape[0]} gt keypoints")
    if cfg.falloff.shape[0] != p.shape[0]:
        raise ValueError("oks: falloff length differs from keypoint count")
    vis = gt.labeled
    if not vis.any():
        return None
    s = gt.object_scale
    d2 = np.sum((p - gt.keypoints[:, :2]) ** 2, axis=1)
    e = np.exp(-d2 / (2.0 * s * s * cfg.falloff**2))
    return float(e[vis].sum() / vis.sum())


# ----------------------------------------------------------------------------
# AP / AR


def interpolated_ap(tp: np.ndarray, n_gt: int, points: int = 101) -> float:
    """Area under the 101-point interpolated precision/recall curve of a ranked list."""
    if n_gt == 0:
        return 0.0
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # i / (points - 1) keeps levels such as 0.3 exact, unlike linspace's 30 * 0.01
    grid = np.arange(points) / (points - 1)
    idx = np.searchsorted(recall, grid, side="left")
    vals = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    # correctly rounded sum, independent of accumulation order
    return math.fsum(vals.tolist()) / points


def _greedy_match(order: Sequence[int], sims: np.ndarray, thr: float,
                  ignored: np.ndarray) -> Dict[int, int]:
    """Map prediction index -> gt index for one image, in the given order.

    Each prediction takes the unmatched non-ignored gt with the highest
    similarity >= thr (lowest index on ties), falling back to ignored gts.
    """
    taken = np.zeros(sims.shape[1], dtype=bool)
    match: Dict[int, int] = {}
    for i in order:
        best = -1
        for pool in (~ignored, ignored):
            cand = np.where(pool & ~taken & (sims[i] >= thr))[0]
            if cand.size:
                best = int(cand[np.argmax(sims[i, cand])])
                break
        if best >= 0:
            taken[best] = True
            match[i] = best
    return match


@dataclass
class EvalReport:
    ap_per_threshold: Dict[float, float] = field(default_factory=dict)
    ar_per_threshold: Dict[float, float] = field(default_factory=dict)
    ap: Optional[float] = None
    ar: Optional[float] = None
    per_joint: Dict[str, float] = field(default_factory=dict)
    groups: Dict[str, Optional[float]] = field(default_factory=dict)
    total: Optional[float] = None
    metric: str = ""
    threshold: Optional[float] = None
    count: int = 0

    def rows(self) -> List[Tuple[str, object]]:
        rows: List[Tuple[str, object]] = [("metric", self.metric), ("instances", self.count)]
        if self.ap is not None:
            rows.append(("AP", self.ap))
            for t in (0.5, 0.75):
                if t in self.ap_per_threshold:
                    rows.append((f"AP{int(round(t * 100))}", self.ap_per_threshold[t]))
            rows.append(("AR", self.ar))
        for name, value in self.groups.items():
            rows.append((name, value))
        for name, value in self.per_joint.items():
            rows.append((f"joint:{name}", value))
        if self.total is not None:
            rows.append(("total", self.total))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in self.rows():
            writer.writerow([key, "" if value is None else value])
        return buf.getvalue()

    def to_text(self) -> str:
        if self.metric == "pckh" and self.groups:
            return pckh_text_table({"": self})
        lines = []
        for key, value in self.rows():
            v = f"{value:.4f}" if isinstance(value, float) else ("-" if value is None else value)
            lines.append(f"{key:<24} {v}")
        return "\n".join(lines)


def average_precision(predictions, ground_truths: Sequence[PersonInstance],
                      cfg: OKSConfig) -> Optional[EvalReport]:
    """COCO-style AP/AR over an OKS threshold grid.

    predictions: iterable of (image_id, keypoints, score).  Predictions are
    ranked by descending score, ties broken by their position in the input.
    Returns None when there is no ground truth to recall.
    """
    preds = [(img, _xy(kp), float(score)) for img, kp, score in predictions]
    gts_by_img: Dict[object, List[PersonInstance]] = {}
    for g in ground_truths:
        if g.labeled.any():
            gts_by_img.setdefault(g.image_id, []).append(g)
    lo, hi = cfg.area_range or (-math.inf, math.inf)
    ignored = {img: np.array([not (lo <= g.area <= hi) for g in gs])
               for img, gs in gts_by_img.items()}
    n_gt = int(sum((~ig).sum() for ig in ignored.values()))
    if n_gt == 0:
        return None

    ranking = sorted(range(len(preds)), key=lambda i: (-preds[i][2], i))
    by_img: Dict[object, List[int]] = {}
    for i in ranking:
        by_img.setdefault(preds[i][0], []).append(i)
    sims = {}
    for img, idxs in by_img.items():
        gs = gts_by_img.get(img, [])
        sims[img] = np.array([[oks(preds[i][1], g, cfg) for g in gs] for i in idxs]).reshape(
            len(idxs), len(gs))

    report = EvalReport(metric="oks-ap", count=len(ground_truths))
    for t in cfg.thresholds:
        status = {}
        for img, idxs in by_img.items():
            ig = ignored.get(img, np.zeros(0, dtype=bool))
            m = _greedy_match(range(len(idxs)), sims[img], t, ig)
            for local, pi in enumerate(idxs):
                if local in m:
                    status[pi] = 0 if ig[m[local]] else 1
                else:
                    status[pi] = -1
        tp = np.array([status[i] == 1 for i in ranking if status[i] != 0], dtype=np.float64)
        key = float(np.round(t, 2))
        report.ap_per_threshold[key] = interpolated_ap(tp, n_gt)
        report.ar_per_threshold[key] = float(tp.sum() / n_gt)
    report.ap = float(np.mean(list(report.ap_per_threshold.values())))
    report.ar = float(np.mean(list(report.ar_per_threshold.values())))
    return report


# ----------------------------------------------------------------------------
# PCK / PCKh


@dataclass
class PCKResult:
    correct: np.ndarray  # (k,) bool, False for unlabeled joints
    labeled: np.ndarray  # (k,) bool
    fraction: float


def _pck_with(pred, gt: PersonInstance, r: float, normaliser: float) -> PCKResult:
    if not 0 < r <= 1:
        raise ValueError(f"threshold r={r} must lie in (0, 1]")
    p = _xy(pred)
    labeled = gt.labeled
    dist = np.linalg.norm(p - gt.keypoints[:, :2], axis=1)
    correct = (dist / normaliser <= r) & labeled
    n = int(labeled.sum())
    return PCKResult(correct, labeled, float(correct.sum() / n) if n else float("nan"))


def torso_diameter(gt: PersonInstance) -> float:
    rhip, lsho = gt.torso
    if gt.keypoints[rhip, 2] <= 0 or gt.keypoints[lsho, 2] <= 0:
        raise ValueError("pck: torso endpoints must be labeled")
    return float(np.linalg.norm(gt.keypoints[rhip, :2] - gt.keypoints[lsho, :2]))


def pck(pred, gt: PersonInstance, r: float) -> PCKResult:
    """Joint i is correct iff its distance is at most r times the torso diameter."""
    torso = torso_diameter(gt)
    if torso <= 0:
        raise ValueError("pck: zero torso diameter (degenerate instance)")
    return _pck_with(pred, gt, r, torso)


def pckh(pred, gt: PersonInstance, r: float = 0.5) -> PCKResult:
    if gt.head_size is None or gt.head_size <= 0:
        raise ValueError("pckh: instance has no positive head_size")
    return _pck_with(pred, gt, r, gt.head_size)


def aggregate_pck(results: Sequence[PCKResult], joint_names: Sequence[str],
                  groups: Optional[Dict[str, Sequence[int]]] = None,
                  metric: str = "pck", r: Optional[float] = None) -> EvalReport:
    """Per-joint accuracy, optional joint groups, and a labeled-weighted total."""
    correct = np.sum([res.correct for res in results], axis=0)
    labeled = np.sum([res.labeled for res in results], axis=0)
    report = EvalReport(metric=metric, threshold=r, count=len(results))
    for i, name in enumerate(joint_names):
        report.per_joint[name] = float(correct[i] / labeled[i]) if labeled[i] else None
    if groups:
        members = []
        for g in PCKH_GROUPS:
            idx = list(groups.get(g, ()))
            members += idx
            n = labeled[idx].sum() if idx else 0
            report.groups[g] = float(correct[idx].sum() / n) if n else None
        n = labeled[members].sum()
        report.total = float(correct[members].sum() / n) if n else None
    else:
        n = labeled.sum()
        report.total = float(correct.sum() / n) if n else None
    return report


def pckh_text_table(reports: Dict[str, EvalReport], percent: bool = True) -> str:
    """Aligned table with one row per report, columns in MPII joint-group order."""
    width = max([len(k) for k in reports] + [8])
    lines = [f"{'Method':<{width}} " + " ".join(f"{h:>6}" for h in PCKH_HEADER)]
    for name, rep in reports.items():
        cells = [rep.groups.get(g) for g in PCKH_GROUPS] + [rep.total]
        fmt = [("-" if c is None else f"{c * (100 if percent else 1):.1f}") for c in cells]
        lines.append(f"{name:<{width}} " + " ".join(f"{c:>6}" for c in fmt))
    return "\n".join(lines)
