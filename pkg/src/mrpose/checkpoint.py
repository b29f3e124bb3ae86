"""Checkpoints as a JSON manifest plus a raw little-endian float32 blob.

``<stem>.json`` lists every tensor with its shape and element offset into
``<stem>.bin``; the blob is the tensors concatenated in manifest order.
Tensor names are prefixed by their role: ``param:``, ``buffer:``,
``adam_m:`` and ``adam_v:``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .architectures import ArchitectureSpec, PoseNet, build_model
from .nn.optim import Adam

BLOB_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    spec: ArchitectureSpec
    epoch: int
    tensors: Dict[str, np.ndarray]
    loss_history: List[dict] = field(default_factory=list)
    seed: int = 0
    adam_step: int = 0
    config: dict = field(default_factory=dict)

    def build(self) -> Tuple[PoseNet, Adam]:
        """Model and optimizer restored from this checkpoint."""
        model = build_model(self.spec, self.seed)
        load_into(model, self)
        opt = Adam(model.named_parameters(), lr=self.config.get("base_lr", 1e-3))
        opt.state["step"] = self.adam_step
        dtype = np.dtype(self.spec.dtype)
        for name in opt.params:
            if f"adam_m:{name}" in self.tensors:
                opt.state["m"][name] = self.tensors[f"adam_m:{name}"].astype(dtype)
                opt.state["v"][name] = self.tensors[f"adam_v:{name}"].astype(dtype)
        return model, opt


def snapshot(model: PoseNet, epoch: int, optimizer: Optional[Adam] = None,
             loss_history: Optional[List[dict]] = None, seed: int = 0,
             config: Optional[dict] = None) -> Checkpoint:
    tensors: Dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        tensors[f"param:{name}"] = p.data.copy()
    for name, b in model.named_buffers():
        tensors[f"buffer:{name}"] = b.copy()
    step = 0
    if optimizer is not None:
        step = optimizer.state.get("step", 0)
        for name in optimizer.params:
            if name in optimizer.state["m"]:
                tensors[f"adam_m:{name}"] = optimizer.state["m"][name].copy()
                tensors[f"adam_v:{name}"] = optimizer.state["v"][name].copy()
    return Checkpoint(model.arch, epoch, tensors, list(loss_history or []), seed, step,
                      dict(config or {}))


def load_into(model: PoseNet, ckpt: Checkpoint) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    missing = [n for n in params if f"param:{n}" not in ckpt.tensors]
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, p in params.items():
        src = ckpt.tensors[f"param:{name}"]
        if src.shape != p.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {src.shape}, model {p.shape}")
        p.data[...] = src
    for name, b in buffers.items():
        if f"buffer:{name}" in ckpt.tensors:
            b[...] = ckpt.tensors[f"buffer:{name}"]


def save_checkpoint(ckpt: Checkpoint, stem) -> Tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        flat = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).reshape(-1)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "count": int(flat.size)})
        chunks.append(flat.tobytes())
        offset += flat.size
    manifest = {
        "format": "mrpose-checkpoint-1",
        "spec": ckpt.spec.to_dict(),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "adam_step": ckpt.adam_step,
        "loss_history": ckpt.loss_history,
        "config": ckpt.config,
        "tensors": index,
    }
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    bin_path.write_bytes(b"".join(chunks))
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return json_path, bin_path


def load_checkpoint(path) -> Checkpoint:
    """Load from ``<stem>``, ``<stem>.json`` or ``<stem>.bin``."""
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    doc = json.loads(json_path.read_text())
    blob = np.frombuffer(bin_path.read_bytes(), dtype=BLOB_DTYPE)
    expected = sum(t["count"] for t in doc["tensors"])
    if blob.size != expected:
        raise ValueError(f"{bin_path}: blob holds {blob.size} floats, manifest declares {expected}")
    tensors = {}
    for t in doc["tensors"]:
        if t["name"] in tensors:
            raise ValueError(f"{json_path}: tensor {t['name']} listed twice")
        chunk = blob[t["offset"] : t["offset"] + t["count"]]
        tensors[t["name"]] = chunk.reshape(t["shape"]).astype(np.float32)
    return Checkpoint(
        spec=ArchitectureSpec.from_dict(doc["spec"]),
        epoch=doc["epoch"],
        tensors=tensors,
        loss_history=doc.get("loss_history", []),
        seed=doc.get("seed", 0),
        adam_step=doc.get("adam_step", 0),
        config=doc.get("config", {}),
    )
