"""SimpleBaseline and the four multi-resolution pose networks.

All five share the same residual backbone and the same three-deconvolution
trunk naming, so trunk weights can be copied between variants by name.

    baseline  stage4 -> D -> D -> D -> 1x1 head
    mrheat1   low-res heatmaps from deconv1, lifted and summed with deconv2
              heatmaps, lifted again and summed with the trunk output
    mrheat2   deconv1 / deconv2 heatmaps lifted independently, summed at the end
    mrfea1    stage1 + lift(stage2) + lift(stage3) + trunk, all C wide, then head
    mrfea2    same as mrfea1 with 4C/2C/C channel ladders on the lifts
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .nn import functional as F
from .nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    MaxPool2d,
    Module,
    ReLU,
    Sequential,
    trace_layers,
)
from .nn.tensor import ShapeError, Tensor

VARIANTS = ("baseline", "mrheat1", "mrheat2", "mrfea1", "mrfea2")


class ConfigError(ValueError):
    """Invalid architecture or training configuration."""


@dataclass
class ArchitectureSpec:
    variant: str = "baseline"
    base_channels: int = 8
    num_keypoints: int = 17
    stage_depths: Tuple[int, int, int, int] = (2, 2, 2, 2)
    input_size: Tuple[int, int] = (128, 96)  # (H, W)
    aux_supervision: bool = False
    zero_init_heads: bool = False
    # None: He-normal like every other conv; otherwise N(0, std) weights, zero bias
    head_init_std: Optional[float] = None
    dtype: str = "float32"

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.input_size = tuple(int(s) for s in self.input_size)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.base_channels < 1 or self.num_keypoints < 1:
            raise ConfigError("base_channels and num_keypoints must be positive")
        if self.head_init_std is not None and self.head_init_std < 0:
            raise ConfigError("head_init_std must be non-negative")
        if len(self.stage_depths) != 4 or min(self.stage_depths) < 1:
            raise ConfigError(f"stage_depths must be 4 positive integers, got {self.stage_depths}")
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ConfigError(f"input_size {h}x{w} must be divisible by 32 in both dimensions")

    @property
    def heatmap_size(self) -> Tuple[int, int]:
        return self.input_size[0] // 4, self.input_size[1] // 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ----------------------------------------------------------------------------
# building blocks


class ResidualUnit(Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu2 = ReLU()
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Sequential(
                Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, rng=rng, dtype=dtype),
                BatchNorm2d(out_ch, dtype=dtype),
            )

    def forward(self, x: Tensor) -> Tensor:
        y = self.relu1(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return self.relu2(F.add(y, skip))


class Backbone(Module):
    """Residual-network stem plus four stages; returns the four stage outputs."""

    def __init__(self, spec: ArchitectureSpec, rng, dtype):
        super().__init__()
        c = spec.base_channels
        self.stem = Sequential(
            Conv2d(3, c, 7, 2, 3, bias=False, rng=rng, dtype=dtype),
            BatchNorm2d(c, dtype=dtype),
            ReLU(),
            MaxPool2d(3, 2, 1),
        )
        self.stages = []
        in_ch = c
        for i, depth in enumerate(spec.stage_depths):
            out_ch = c * 2**i
            units = [ResidualUnit(in_ch, out_ch, 1 if i == 0 else 2, rng, dtype)]
            units += [ResidualUnit(out_ch, out_ch, 1, rng, dtype) for _ in range(depth - 1)]
            self.stages.append(Sequential(*units))
            in_ch = out_ch

    @property
    def stage_channels(self) -> List[int]:
        return [s[0].conv1.spec.out_channels for s in self.stages]

    def forward(self, x: Tensor) -> List[Tensor]:
        taps = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


def deconv_block(in_ch: int, out_ch: int, rng, dtype) -> Sequential:
    """4x4 / stride-2 transposed conv + batch norm + relu; doubles resolution."""
    return Sequential(
        ConvTranspose2d(in_ch, out_ch, 4, 2, 1, bias=False, rng=rng, dtype=dtype),
        BatchNorm2d(out_ch, dtype=dtype),
        ReLU(),
    )


def heatmap_lift(k: int, rng, dtype) -> ConvTranspose2d:
    """Linear k-channel deconv that doubles the resolution of a heatmap stack."""
    return ConvTranspose2d(k, k, 4, 2, 1, bias=True, rng=rng, dtype=dtype)


def heatmap_head(c_in: int, spec: ArchitectureSpec, rng, dtype) -> Conv2d:
    """1x1 conv from features to k heatmaps."""
    head = Conv2d(c_in, spec.num_keypoints, 1, 1, 0, bias=True, rng=rng, dtype=dtype)
    if spec.head_init_std is not None:
        head.weight.data[...] = rng.normal(0.0, spec.head_init_std, head.weight.shape)
        head.bias.data[...] = 0
    return head


def _zero(module: Module) -> None:
    for p in module.parameters():
        p.data[...] = 0


# ----------------------------------------------------------------------------
# models


class PoseNet(Module):
    """Common base: backbone, three trunk deconvs and the final 1x1 head."""

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator,
                 trunk_channels: Optional[Tuple[int, int, int]] = None):
        super().__init__()
        self.spec = None  # layer spec slot; models are not traced as leaves
        self.arch = spec
        dtype = np.dtype(spec.dtype)
        c, k = spec.base_channels, spec.num_keypoints
        self.backbone = Backbone(spec, rng, dtype)
        ladder = trunk_channels or (c, c, c)
        self.trunk_channels = tuple(ladder)
        self.deconv1 = deconv_block(8 * c, ladder[0], rng, dtype)
        self.deconv2 = deconv_block(ladder[0], ladder[1], rng, dtype)
        self.deconv3 = deconv_block(ladder[1], ladder[2], rng, dtype)
        self.final = heatmap_head(ladder[2], spec, rng, dtype)
        if spec.zero_init_heads:
            _zero(self.final)
        # branch names excluded from the final sum (used for ablation)
        self.disabled_branches: set = set()

    @property
    def branch_names(self) -> Tuple[str, ...]:
        return ()

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an n x 3 x H x W batch, got {x.shape}")
        if tuple(x.shape[2:]) != self.arch.input_size:
            raise ShapeError(
                f"input spatial size {tuple(x.shape[2:])} != configured {self.arch.input_size}"
            )

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_taps(x)[0]

    def forward_taps(self, x: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        self.check_input(x)
        taps = {f"stage{i + 1}": t for i, t in enumerate(self.backbone(x))}
        taps["deconv1"] = self.deconv1(taps["stage4"])
        taps["deconv2"] = self.deconv2(taps["deconv1"])
        taps["deconv3"] = self.deconv3(taps["deconv2"])
        out = self._combine(taps)
        taps["output"] = out
        return out, taps

    def _combine(self, taps: Dict[str, Tensor]) -> Tensor:
        return self.final(taps["deconv3"])

    def _sum_enabled(self, base: Tensor, branches: Dict[str, Tensor]) -> Tensor:
        out = base
        for name, t in branches.items():
            if name not in self.disabled_branches:
                out = F.add(out, t)
        return out

    def aux_heatmaps(self, taps: Dict[str, Tensor]) -> List[Tensor]:
        """Lower-resolution heatmap stacks eligible for auxiliary supervision."""
        return []

    def zero_auxiliary_branches(self) -> None:
        """Make every auxiliary branch contribute exactly zero to the output."""


class SimpleBaseline(PoseNet):
    pass


class MRHeatNet1(PoseNet):
    def __init__(self, spec, rng):
        super().__init__(spec, rng)
        dtype = np.dtype(spec.dtype)
        c, k = spec.base_channels, spec.num_keypoints
        self.head1 = heatmap_head(c, spec, rng, dtype)
        self.head2 = heatmap_head(c, spec, rng, dtype)
        self.lift_low = heatmap_lift(k, rng, dtype)
        self.lift_mid = heatmap_lift(k, rng, dtype)
        if spec.zero_init_heads:
            self.zero_auxiliary_branches()

    @property
    def branch_names(self):
        return ("multires",)

    def _combine(self, taps):
        taps["heat1"] = self.head1(taps["deconv1"])
        taps["heat2"] = self.head2(taps["deconv2"])
        medium = F.add(self.lift_low(taps["heat1"]), taps["heat2"])
        taps["heat_medium"] = medium
        lifted = self.lift_mid(medium)
        return self._sum_enabled(self.final(taps["deconv3"]), {"multires": lifted})

    def aux_heatmaps(self, taps):
        return [taps["heat1"], taps["heat2"]]

    def zero_auxiliary_branches(self):
        for m in (self.head1, self.head2, self.lift_low, self.lift_mid):
            _zero(m)


class MRHeatNet2(PoseNet):
    def __init__(self, spec, rng):
        super().__init__(spec, rng)
        dtype = np.dtype(spec.dtype)
        c, k = spec.base_channels, spec.num_keypoints
        self.head1 = heatmap_head(c, spec, rng, dtype)
        self.head2 = heatmap_head(c, spec, rng, dtype)
        self.up1 = Sequential(
            ConvTranspose2d(k, k, 4, 2, 1, bias=False, rng=rng, dtype=dtype),
            BatchNorm2d(k, dtype=dtype),
            ReLU(),
            heatmap_lift(k, rng, dtype),
        )
        self.up2 = heatmap_lift(k, rng, dtype)
        if spec.zero_init_heads:
            self.zero_auxiliary_branches()

    @property
    def branch_names(self):
        return ("low", "medium")

    def _combine(self, taps):
        taps["heat1"] = self.head1(taps["deconv1"])
        taps["heat2"] = self.head2(taps["deconv2"])
        branches = {"low": self.up1(taps["heat1"]), "medium": self.up2(taps["heat2"])}
        return self._sum_enabled(self.final(taps["deconv3"]), branches)

    def aux_heatmaps(self, taps):
        return [taps["heat1"], taps["heat2"]]

    def zero_auxiliary_branches(self):
        _zero(self.head1)
        _zero(self.head2)
        _zero(self.up1[3])
        _zero(self.up2)


class MRFeaNet(PoseNet):
    """Feature-map fusion; ``widening`` selects the 4C/2C/C ladders (MRFeaNet2)."""

    widening = False

    def __init__(self, spec, rng):
        c = spec.base_channels
        trunk = (4 * c, 2 * c, c) if self.widening else (c, c, c)
        super().__init__(spec, rng, trunk_channels=trunk)
        dtype = np.dtype(spec.dtype)
        if self.widening:
            self.lift3 = Sequential(deconv_block(4 * c, 2 * c, rng, dtype),
                                    deconv_block(2 * c, c, rng, dtype))
        else:
            self.lift3 = Sequential(deconv_block(4 * c, c, rng, dtype),
                                    deconv_block(c, c, rng, dtype))
        self.lift2 = Sequential(deconv_block(2 * c, c, rng, dtype))
        if spec.zero_init_heads:
            self.zero_auxiliary_branches()

    @property
    def branch_names(self):
        return ("stage1", "stage2", "stage3")

    def _combine(self, taps):
        branches = {
            "stage3": self.lift3(taps["stage3"]),
            "stage2": self.lift2(taps["stage2"]),
            "stage1": taps["stage1"],
        }
        taps["fused"] = self._sum_enabled(taps["deconv3"], branches)
        return self.final(taps["fused"])

    def zero_auxiliary_branches(self):
        for lift in (self.lift3, self.lift2):
            bn = lift[-1][1]
            bn.gamma.data[...] = 0
            bn.beta.data[...] = 0
        # the stage-1 branch is an identity with nothing to zero
        self.disabled_branches.add("stage1")


class MRFeaNet1(MRFeaNet):
    widening = False


class MRFeaNet2(MRFeaNet):
    widening = True


_CLASSES = {
    "baseline": SimpleBaseline,
    "mrheat1": MRHeatNet1,
    "mrheat2": MRHeatNet2,
    "mrfea1": MRFeaNet1,
    "mrfea2": MRFeaNet2,
}


def build_model(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    """Build any of the five variants; identical (spec, seed) gives identical weights."""
    rng = np.random.default_rng(seed)
    model = _CLASSES[spec.variant](spec, rng)
    model.assign_names()
    return model


def _require(spec: ArchitectureSpec, variant: str) -> None:
    if spec.variant != variant:
        raise ConfigError(f"expected variant {variant!r}, got {spec.variant!r}")


def build_backbone(spec: ArchitectureSpec, seed: int = 0) -> Backbone:
    backbone = Backbone(spec, np.random.default_rng(seed), np.dtype(spec.dtype))
    backbone.assign_names()
    return backbone


def build_simple_baseline(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    _require(spec, "baseline")
    return build_model(spec, seed)


def build_mrheatnet1(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    _require(spec, "mrheat1")
    return build_model(spec, seed)


def build_mrheatnet2(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    _require(spec, "mrheat2")
    return build_model(spec, seed)


def build_mrfeanet1(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    _require(spec, "mrfea1")
    return build_model(spec, seed)


def build_mrfeanet2(spec: ArchitectureSpec, seed: int = 0) -> PoseNet:
    _require(spec, "mrfea2")
    return build_model(spec, seed)


def forward(model: PoseNet, batch: Tensor):
    """Heatmaps, plus the auxiliary heatmap stacks when aux_supervision is on."""
    out, taps = model.forward_taps(batch)
    if model.arch.aux_supervision:
        return out, model.aux_heatmaps(taps)
    return out


def param_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def copy_shared_weights(src: Module, dst: Module) -> List[str]:
    """Copy parameters and buffers whose names and shapes match; returns copied names."""
    copied = []
    dst_params = dict(dst.named_parameters())
    for name, p in src.named_parameters():
        q = dst_params.get(name)
        if q is not None and q.shape == p.shape:
            q.data[...] = p.data
            copied.append(name)
    dst_bufs = dict(dst.named_buffers())
    for name, b in src.named_buffers():
        if name in dst_bufs and dst_bufs[name].shape == b.shape:
            dst_bufs[name][...] = b
    return copied


def embed_trunk(src: PoseNet, dst: PoseNet) -> None:
    """Copy ``src`` weights into ``dst`` where the trunk of ``dst`` is wider.

    Backbone and head weights are copied verbatim.  Each trunk deconv of
    ``src`` is written into the leading channels of the wider ``dst`` layer
    and every extra channel is zeroed (weights and batch-norm affine), so
    the extra channels carry exact zeros and ``dst`` computes the same
    trunk function as ``src``.
    """
    copy_shared_weights(src, dst)
    for name in ("deconv1", "deconv2", "deconv3"):
        s, d = getattr(src, name), getattr(dst, name)
        sw, dw = s[0].weight.data, d[0].weight.data
        dw[...] = 0
        dw[: sw.shape[0], : sw.shape[1]] = sw
        s_bn, d_bn = s[1], d[1]
        n = s_bn.gamma.shape[0]
        for attr in ("gamma", "beta"):
            getattr(d_bn, attr).data[...] = 0
            getattr(d_bn, attr).data[:n] = getattr(s_bn, attr).data
        for key in ("running_mean", "running_var"):
            d_bn.buffers[key][...] = 1.0 if key == "running_var" else 0.0
            d_bn.buffers[key][:n] = s_bn.buffers[key]
    sw, dw = src.final.weight.data, dst.final.weight.data
    dw[...] = 0
    dw[:, : sw.shape[1]] = sw
    dst.final.bias.data[...] = src.final.bias.data


def summary(model: PoseNet, batch_size: int = 1) -> str:
    """Plain-text layer table: name, kind, input shape, output shape, params."""
    names = {id(m): n for n, m in model.named_modules()}
    h, w = model.arch.input_size
    x = Tensor(np.zeros((batch_size, 3, h, w), dtype=np.dtype(model.arch.dtype)))
    was_training = model.training
    model.eval()
    try:
        rows = trace_layers(model, x)
    finally:
        model.train(was_training)
    lines = [f"{'name':<40} {'kind':<16} {'in':<18} {'out':<18} {'params':>8}"]
    for layer, in_shape, out_shape in rows:
        n_params = sum(p.size for p in layer.parameters())
        lines.append(
            f"{names.get(id(layer), '?'):<40} {layer.spec.kind:<16} "
            f"{'x'.join(map(str, in_shape[1:])):<18} {'x'.join(map(str, out_shape[1:])):<18} "
            f"{n_params:>8}"
        )
    lines.append(f"variant={model.arch.variant} total_params={param_count(model)}")
    return "\n".join(lines)


def layer_specs(model: Module) -> Dict[str, object]:
    return {name: m.spec for name, m in model.named_modules() if m.spec is not None}
