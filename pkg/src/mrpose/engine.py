"""Training loop, evaluation, single-image prediction and run comparison."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .architectures import ConfigError, PoseNet, build_model, param_count
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, snapshot
from .config import TrainConfig, lr_at_epoch
from .data.coco import load_keypoint_annotations
from .data.loader import AugmentationConfig, batch_iterator, normalise
from .data.manifest import DatasetManifest
from .data.synthetic import SyntheticConfig, generate_synthetic_dataset
from .data.transforms import crop_matrix, expand_box_to_aspect, warp_image
from .heatmap import decode_keypoints, downsample_targets, export_heatmaps, joints_loss
from .metrics import (
    EvalReport,
    OKSConfig,
    PersonInstance,
    aggregate_pck,
    average_precision,
    pck,
    pckh,
)
from .nn.functional import add_n
from .nn.optim import Adam
from .nn.tensor import Tensor
from .pgm import read_pgm

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_metric", "wall_time")


class TrainingAborted(RuntimeError):
    """Raised when the loss stops being finite."""


# ----------------------------------------------------------------------------
# data


def load_dataset(data: dict, seed: int = 0) -> DatasetManifest:
    if "synthetic" in data:
        cfg = SyntheticConfig.from_dict(data["synthetic"] or {})
        return generate_synthetic_dataset(cfg, data.get("seed", seed), data.get("out_dir"))
    if "manifest" in data:
        return DatasetManifest.load(data["manifest"])
    if "annotations" in data:
        return load_keypoint_annotations(data["annotations"], image_root=data.get("image_root"))
    raise ConfigError(f"data section needs 'synthetic', 'manifest' or 'annotations': {data}")


def dataset_fingerprint(manifest: DatasetManifest) -> str:
    doc = manifest.to_dict()
    doc.pop("config", None)
    h = hashlib.sha256(json.dumps(doc, sort_keys=True).encode())
    for rec in manifest.records:
        if rec.raster is not None:
            h.update(np.ascontiguousarray(rec.raster).tobytes())
    return h.hexdigest()[:16]


def _val_split(manifest: DatasetManifest) -> DatasetManifest:
    val = manifest.split("val")
    return val if len(val) else manifest


# ----------------------------------------------------------------------------
# inference helpers


@dataclass
class Predictions:
    instances: List[PersonInstance]
    keypoints: List[np.ndarray]  # (k, 2) original frame
    confidences: List[np.ndarray]
    loss: float


def infer_dataset(model: PoseNet, manifest: DatasetManifest, aug: AugmentationConfig,
                  batch_size: int = 32, workers: int = 1, decode_mode: str = "global"
                  ) -> Predictions:
    """Infer-mode forward on every record's expanded ground-truth box crop."""
    plain = AugmentationConfig(**{**aug.to_dict(), "enabled": False})
    model.eval()
    out = Predictions([], [], [], 0.0)
    total, weight = 0.0, 0.0
    try:
        for batch in batch_iterator(manifest, batch_size, shuffle=False, augmentation=plain,
                                    workers=workers):
            x = Tensor(batch.images.astype(np.dtype(model.arch.dtype)))
            hm = model(x)
            active = float(batch.weights.sum())
            if active:
                total += joints_loss(hm, batch.targets, batch.weights).item() * active
                weight += active
            for i, inst in enumerate(batch.instances):
                kps, conf, _ = decode_keypoints(hm.data[i], batch.transforms[i].inverse,
                                                mode=decode_mode)
                out.instances.append(inst)
                out.keypoints.append(kps)
                out.confidences.append(conf)
    finally:
        model.train()
    out.loss = total / weight if weight else 0.0
    return out


def score_predictions(preds: Predictions, metric: str, skeleton, r: float = 0.2,
                      thresholds: Optional[Sequence[float]] = None,
                      falloff: Optional[Sequence[float]] = None) -> EvalReport:
    if metric in ("pck", "pckh"):
        fn = pck if metric == "pck" else pckh
        # instances without a normaliser (unlabeled torso / no head size) are not scorable
        usable = _has_torso if metric == "pck" else _has_head
        results = [fn(kp, inst, r) for kp, inst in zip(preds.keypoints, preds.instances)
                   if usable(inst)]
        if not results:
            raise ValueError(f"{metric}: no instance has a usable normaliser")
        groups = skeleton.pckh_groups if metric == "pckh" else None
        return aggregate_pck(results, skeleton.joint_names, groups, metric, r)
    if metric == "oks-ap":
        k = skeleton.k
        kw = {} if thresholds is None else {"thresholds": np.asarray(thresholds)}
        cfg = OKSConfig(np.asarray(falloff) if falloff is not None else np.full(k, 0.1), **kw)
        dets = [(inst.image_id, kp, float(np.mean(conf)))
                for inst, kp, conf in zip(preds.instances, preds.keypoints, preds.confidences)]
        report = average_precision(dets, preds.instances, cfg)
        if report is None:
            raise ValueError("oks-ap: no ground-truth instance has labeled keypoints")
        return report
    raise ValueError(f"unknown metric {metric!r}")


def _has_torso(inst: PersonInstance) -> bool:
    a, b = inst.torso
    return bool(inst.keypoints[a, 2] > 0 and inst.keypoints[b, 2] > 0)


def _has_head(inst: PersonInstance) -> bool:
    return inst.head_size is not None and inst.head_size > 0


def _headline(report: EvalReport) -> float:
    return float(report.ap if report.metric == "oks-ap" else report.total)


# ----------------------------------------------------------------------------
# training


def _first_bad_gradient(model: PoseNet) -> str:
    for name, p in model.named_parameters():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return name
    return "<none: gradients finite, loss itself overflowed>"


def train_step(model: PoseNet, opt: Adam, batch, lr: float) -> float:
    x = Tensor(batch.images.astype(np.dtype(model.arch.dtype)))
    out, taps = model.forward_taps(x)
    loss = joints_loss(out, batch.targets, batch.weights)
    if model.arch.aux_supervision:
        extra = []
        for aux in model.aux_heatmaps(taps):
            factor = out.shape[2] // aux.shape[2]
            extra.append(joints_loss(aux, downsample_targets(batch.targets, factor),
                                     batch.weights))
        if extra:
            loss = add_n(loss, *extra)
    model.zero_grad()
    loss.backward()
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingAborted(f"non-finite loss {value}; first non-finite parameter gradient: "
                              f"{_first_bad_gradient(model)}")
    opt.step(lr)
    return value


def _stored_config(config: TrainConfig) -> dict:
    d = config.to_dict()
    # run-location and wall-clock settings do not affect the trained weights
    for key in ("checkpoint_dir", "workers", "record_wall_time"):
        d.pop(key)
    return d


def write_run_log(rows: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})


def read_run_log(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[dict]
    run_dir: Optional[Path] = None
    summary: dict = field(default_factory=dict)


def train(config: TrainConfig, run_dir=None, resume=None,
          manifest: Optional[DatasetManifest] = None, stop_after: Optional[int] = None,
          progress: bool = False) -> TrainResult:
    """Run the schedule in ``config``; optionally resume from a checkpoint.

    ``stop_after`` ends training after that epoch index (for tests/resume);
    the schedule itself is unchanged.
    """
    run_dir = Path(run_dir or config.checkpoint_dir) if (run_dir or config.checkpoint_dir) else None
    manifest = manifest or load_dataset(config.data, config.seed)
    if manifest.skeleton.k != config.arch.num_keypoints:
        raise ConfigError(f"dataset has k={manifest.skeleton.k}, "
                          f"arch expects {config.arch.num_keypoints}")
    train_m = manifest.split("train")
    if len(train_m) == 0:
        train_m = manifest
    val_m = _val_split(manifest)

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        model, opt = ckpt.build()
        history = list(ckpt.loss_history)
        start = ckpt.epoch + 1
    else:
        model = build_model(config.arch, config.seed)
        opt = Adam(model.named_parameters(), lr=config.base_lr)
        history, start = [], 0
    model.train()
    stored = _stored_config(config)
    last = config.total_epochs - 1 if stop_after is None else min(stop_after, config.total_epochs - 1)

    ckpt = None
    for epoch in range(start, last + 1):
        t0 = time.perf_counter()
        lr = lr_at_epoch(config, epoch)
        losses, sizes = [], []
        for batch in batch_iterator(train_m, config.batch_size, config.seed, epoch,
                                    config.augmentation, workers=config.workers):
            losses.append(train_step(model, opt, batch, lr))
            sizes.append(len(batch.instances))
        preds = infer_dataset(model, val_m, config.augmentation, workers=config.workers)
        report = score_predictions(preds, config.val_metric, manifest.skeleton,
                                   config.pck_threshold, falloff=config.oks_falloff)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.average(losses, weights=sizes)),
            "val_loss": preds.loss,
            "val_metric": _headline(report),
        }
        history.append(row)
        wall = time.perf_counter() - t0
        log_row = {**row, "wall_time": round(wall, 3) if config.record_wall_time else 0.0}
        if progress:
            log.info("epoch %d lr %.0e train %.6f val %.6f %s %.4f (%.1fs)", epoch, lr,
                     row["train_loss"], row["val_loss"], config.val_metric, row["val_metric"], wall)
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            rows = _merge_log(run_dir / "log.csv", log_row)
            write_run_log(rows, run_dir / "log.csv")
        ckpt = snapshot(model, epoch, opt, history, config.seed, stored)
        if run_dir is not None and ((epoch + 1) % config.eval_every == 0 or epoch == last):
            save_checkpoint(ckpt, run_dir / f"ckpt_epoch{epoch:03d}")
            save_checkpoint(ckpt, run_dir / "last")

    if ckpt is None:
        raise ConfigError(f"nothing to train: resume epoch {start} is past the last epoch {last}")
    log_rows = read_run_log(run_dir / "log.csv") if run_dir is not None else history
    summary = {
        "variant": config.arch.variant,
        "params": param_count(model),
        "epochs": ckpt.epoch + 1,
        "final_train_loss": history[-1]["train_loss"],
        "final_val_loss": history[-1]["val_loss"],
        "val_metric": config.val_metric,
        "final_val_metric": history[-1]["val_metric"],
        "dataset": dataset_fingerprint(manifest),
        "seed": config.seed,
    }
    if run_dir is not None:
        (run_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")
    return TrainResult(ckpt, log_rows, run_dir, summary)


def _merge_log(path: Path, row: dict) -> List[dict]:
    """Existing log rows before ``row``'s epoch, followed by ``row``."""
    rows = []
    if path.exists():
        rows = [r for r in read_run_log(path) if int(r["epoch"]) < row["epoch"]]
    rows.append(row)
    return rows


# ----------------------------------------------------------------------------
# evaluate / predict / compare


def evaluate(checkpoint, manifest: DatasetManifest, metric: str = "pck", r: float = 0.2,
             thresholds: Optional[Sequence[float]] = None, workers: int = 1,
             falloff: Optional[Sequence[float]] = None) -> EvalReport:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if ckpt.spec.num_keypoints != manifest.skeleton.k:
        raise ConfigError(f"checkpoint predicts {ckpt.spec.num_keypoints} keypoints but the "
                          f"dataset skeleton has {manifest.skeleton.k}")
    model, _ = ckpt.build()
    aug = AugmentationConfig.from_dict(ckpt.config.get("augmentation", {}))
    aug.crop_size = ckpt.spec.input_size
    preds = infer_dataset(model, manifest, aug, workers=workers)
    return score_predictions(preds, metric, manifest.skeleton, r, thresholds, falloff)


@dataclass
class Prediction:
    keypoints: np.ndarray  # (k, 2) original frame
    confidences: np.ndarray
    heatmaps: np.ndarray
    heatmap_files: List[Path] = field(default_factory=list)


def predict(checkpoint, image, box, out_dir=None) -> Prediction:
    """Expand, crop, forward and decode one person box in one image.

    ``image`` is a path to a PGM file or an 8-bit (H, W) array.  With
    ``out_dir`` the k heatmaps are written as PGMs plus keypoints.json.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if isinstance(image, (str, Path)):
        try:
            image = read_pgm(image)
        except (OSError, ValueError) as exc:
            raise FileNotFoundError(f"unreadable image {image}: {exc}") from exc
    model, _ = ckpt.build()
    model.eval()
    aug = AugmentationConfig.from_dict(ckpt.config.get("augmentation", {}))
    out_h, out_w = ckpt.spec.input_size
    t = crop_matrix(expand_box_to_aspect(box, aug.aspect_ratio), (out_h, out_w))
    crop = warp_image(np.asarray(image, dtype=np.float64), t, fill=float(np.median(image)))
    x = Tensor(normalise(crop, aug.mean, aug.std)[None].astype(np.dtype(ckpt.spec.dtype)))
    hm = model(x).data[0]
    kps, conf, _ = decode_keypoints(hm, t.inverse)
    pred = Prediction(kps, conf, hm)
    if out_dir is not None:
        out = Path(out_dir)
        pred.heatmap_files = export_heatmaps(hm, out)
        doc = {"box": list(map(float, box)),
               "keypoints": [[float(x), float(y), float(c)] for (x, y), c in zip(kps, conf)]}
        (out / "keypoints.json").write_text(json.dumps(doc, indent=1) + "\n")
    return pred


COMPARE_COLUMNS = ("params", "final_train_loss", "final_val_loss", "final_val_metric")


def compare(run_dirs: Sequence) -> str:
    """One row per run, columns in COMPARE_COLUMNS order."""
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    summaries = []
    for d in run_dirs:
        path = Path(d) / "summary.json"
        if not path.exists():
            raise FileNotFoundError(f"run directory {d} has no summary.json (missing or unfinished)")
        summaries.append((Path(d).name, json.loads(path.read_text())))
    datasets = {s["dataset"] for _, s in summaries}
    if len(datasets) > 1:
        raise ValueError(f"runs were trained on different datasets: {sorted(datasets)}")
    metric = summaries[0][1].get("val_metric", "metric")
    header = ["run", "variant", "params", "train_loss", "val_loss", f"val_{metric}"]
    rows = []
    for name, s in summaries:
        rows.append([name, s["variant"], str(s["params"]), f"{s['final_train_loss']:.6f}",
                     f"{s['final_val_loss']:.6f}", f"{s['final_val_metric']:.4f}"])
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                              for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in rows])
