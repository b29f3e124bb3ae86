"""Finite-difference checks over every differentiable op and every variant."""

from __future__ import annotations

from typing import Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from . import nn
from .architectures import VARIANTS, ArchitectureSpec, build_model
from .heatmap import joints_loss
from .nn import functional as F
from .nn.gradcheck import finite_diff_check
from .nn.tensor import Tensor

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
# smallest valid input for the 32x stride backbone, matching batch 2 / C=4 / k=5
MODEL_INPUT = (64, 32)


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _distinct(rng, *shape) -> Tensor:
    """Values with well separated entries, so max-pool has no near-ties."""
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) * 0.1 + rng.uniform(0, 0.01, n)
    return Tensor(vals.reshape(shape), requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    """Entries with |x| >= 0.1, keeping relu's kink out of the difference stencil."""
    x = rng.standard_normal(shape)
    x = np.sign(x) * (np.abs(x) + 0.1)
    return Tensor(x, requires_grad=True)


def op_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable, List[Tensor]]]:
    """name -> (op, inputs) on small random 64-bit tensors."""
    bn_mean, bn_var = np.zeros(3), np.ones(3)
    run_mean, run_var = np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.5, 2.0])
    target = rng.uniform(0, 1, (2, 3, 4, 5))
    weights = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    return {
        "conv2d 3x3 s1 p1": (lambda x, w, b: F.conv2d(x, w, b, 1, 1),
                             [_t(rng, 2, 3, 6, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)]),
        "conv2d 7x7 s2 p3": (lambda x, w: F.conv2d(x, w, None, 2, 3),
                             [_t(rng, 1, 2, 9, 8), _t(rng, 3, 2, 7, 7)]),
        "conv2d 1x1": (lambda x, w, b: F.conv2d(x, w, b),
                       [_t(rng, 2, 4, 3, 3), _t(rng, 5, 4, 1, 1), _t(rng, 5)]),
        "conv_transpose2d 4x4 s2 p1": (lambda x, w, b: F.conv_transpose2d(x, w, b, 2, 1),
                                       [_t(rng, 2, 3, 3, 4), _t(rng, 3, 2, 4, 4), _t(rng, 2)]),
        "batch_norm train": (
            lambda x, g, b: F.batch_norm(x, g, b, bn_mean.copy(), bn_var.copy(), True),
            [_t(rng, 4, 3, 2, 3), _t(rng, 3), _t(rng, 3)]),
        "batch_norm infer": (
            lambda x, g, b: F.batch_norm(x, g, b, run_mean, run_var, False),
            [_t(rng, 2, 3, 2, 2), _t(rng, 3), _t(rng, 3)]),
        "relu": (F.relu, [_away_from_zero(rng, 2, 3, 4, 4)]),
        "max_pool2d 3/2/1": (lambda x: F.max_pool2d(x, 3, 2, 1), [_distinct(rng, 2, 2, 5, 6)]),
        "add": (F.add, [_t(rng, 2, 3, 2, 2), _t(rng, 2, 3, 2, 2)]),
        "add_n": (lambda a, b, c: F.add_n(a, b, c),
                  [_t(rng, 1, 2, 3, 3), _t(rng, 1, 2, 3, 3), _t(rng, 1, 2, 3, 3)]),
        "scale": (lambda x: F.scale(x, -2.5), [_t(rng, 2, 2, 2, 2)]),
        "total": (F.total, [_t(rng, 2, 3, 2, 2)]),
        "joints_loss": (lambda p: joints_loss(p, target, weights), [_t(rng, 2, 3, 4, 5)]),
    }


def check_ops(seed: int = 0) -> Iterator[Tuple[str, float]]:
    rng = np.random.default_rng(seed)
    for name, (op, inputs) in op_cases(rng).items():
        yield name, finite_diff_check(op, inputs, step=1e-5, seed=seed)


def tiny_spec(variant: str, aux: bool = False) -> ArchitectureSpec:
    return ArchitectureSpec(variant=variant, base_channels=4, num_keypoints=5,
                            input_size=MODEL_INPUT,
                            aux_supervision=aux, dtype="float64")


def check_parameters(loss: Callable[[], Tensor], params: Sequence[Tuple[str, nn.Parameter]],
                     n: int = 10, step: float = 1e-5, seed: int = 0) -> float:
    """Relative error of dloss/dparam at ``n`` random coordinates."""
    rng = np.random.default_rng(seed)
    for _, p in params:
        p.grad = None
    loss().backward()
    sizes = np.array([p.size for _, p in params])
    worst = 0.0
    for _ in range(n):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        _, p = params[k]
        flat = p.data.reshape(-1)
        i = int(rng.integers(flat.size))
        a = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
        orig = flat[i]
        flat[i] = orig + step
        up = loss().item()
        flat[i] = orig - step
        down = loss().item()
        flat[i] = orig
        numeric = (up - down) / (2 * step)
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


def check_variant(variant: str, seed: int = 0, n: int = 10) -> float:
    """End-to-end loss gradient for 10 random parameters of a tiny model.

    Batch-norm layers stay in train mode, so the check covers batch
    statistics as well.  The model's own running buffers are restored after
    every evaluation to keep the forward pass a pure function.
    """
    rng = np.random.default_rng(seed)
    spec = tiny_spec(variant)
    model = build_model(spec, seed)
    h, w = spec.input_size
    x = Tensor(rng.standard_normal((2, 3, h, w)))
    hh, hw = spec.heatmap_size
    target = rng.uniform(0, 1, (2, spec.num_keypoints, hh, hw))
    weights = np.ones((2, spec.num_keypoints))
    buffers = {name: b.copy() for name, b in model.named_buffers()}
    live = dict(model.named_buffers())

    def loss() -> Tensor:
        for name, b in buffers.items():
            live[name][...] = b
        return joints_loss(model(x), target, weights)

    return check_parameters(loss, list(model.named_parameters()), n=n, seed=seed)


def run_gradient_suite(seed: int = 0) -> List[Tuple[str, float, float]]:
    """(check name, max relative error, tolerance) for every op and every variant."""
    rows = [(f"op {name}", err, OP_TOLERANCE) for name, err in check_ops(seed)]
    rows += [(f"model {v}", check_variant(v, seed), MODEL_TOLERANCE) for v in VARIANTS]
    return rows
