"""Differentiable layer primitives on NCHW tensors.

Convolutions use a strided window view plus one ``tensordot`` (which lands
in BLAS); the scatter half of each convolution pair loops over kernel
offsets only.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

# ----------------------------------------------------------------------------
# raw numpy kernels


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """View of shape (n, c, oh, ow, kh, kw) over an already padded input."""
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int, oh: int, ow: int) -> np.ndarray:
    """out[n, o, i, j] = sum_{c,a,b} xp[n, c, i*s+a, j*s+b] * w[o, c, a, b]."""
    kh, kw = w.shape[2:]
    win = _windows(xp, kh, kw, stride, oh, ow)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(g: np.ndarray, w: np.ndarray, stride: int, full_shape: tuple) -> np.ndarray:
    """Adjoint of ``_correlate`` w.r.t. its input: spreads g back through w.

    g: (n, o, oh, ow); w: (o, c, kh, kw); full_shape: padded input shape.
    """
    n, _, oh, ow = g.shape
    kh, kw = w.shape[2:]
    cols = np.tensordot(g, w, axes=([1], [0]))  # n, oh, ow, c, kh, kw
    out = np.zeros(full_shape, dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + stride * oh : stride, b : b + stride * ow : stride] += cols[
                :, :, :, :, a, b
            ].transpose(0, 3, 1, 2)
    return out


def _crop(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return x[:, :, p:-p, p:-p]


def _check_rank4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what}: expected a rank-4 NCHW tensor, got shape {x.shape}")


# ----------------------------------------------------------------------------
# differentiable ops


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    _check_rank4(x, "conv2d input")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight: expected (c_out, c_in, kh, kw), got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    n, c, h, w_ = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ShapeError(f"conv2d: in_channels mismatch, input has {c} but weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w_, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w_}")

    xp = _pad(x.data, padding)
    out = _correlate(xp, weight.data, stride, oh, ow)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward(g: np.ndarray) -> None:
        if weight.requires_grad:
            win = _windows(xp, kh, kw, stride, oh, ow)
            weight.accumulate(np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate(_crop(_scatter(g, weight.data, stride, xp.shape), padding))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2, padding: int = 1
) -> Tensor:
    """Transposed convolution; weight layout is (c_in, c_out, kh, kw).

    Output size is (h - 1) * stride - 2 * padding + kh, i.e. exactly 2h for
    the 4x4 / stride 2 / padding 1 configuration.
    """
    _check_rank4(x, "conv_transpose2d input")
    n, c, h, w_ = x.shape
    c_in, c_out, kh, kw = weight.shape
    if c_in != c:
        raise ShapeError(
            f"conv_transpose2d: in_channels mismatch, input has {c} but weight expects {c_in}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != ({c_out},)")
    full = (n, c_out, (h - 1) * stride + kh, (w_ - 1) * stride + kw)
    out_h, out_w = full[2] - 2 * padding, full[3] - 2 * padding
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv_transpose2d: padding removes the whole output")

    out = _crop(_scatter(x.data, weight.data, stride, full), padding).copy()
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward(g: np.ndarray) -> None:
        gp = _pad(g, padding)
        if x.requires_grad:
            x.accumulate(_correlate(gp, weight.data, stride, h, w_))
        if weight.requires_grad:
            win = _windows(gp, kh, kw, stride, h, w_)
            weight.accumulate(np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv_transpose2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation; updates the running buffers in place when training."""
    _check_rank4(x, "batch_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine params must have shape ({c},)")
    bshape = (1, c, 1, 1)
    xd = x.data
    if training:
        count = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if count < 2:
            raise ValueError(
                "batch_norm: training mode needs at least 2 values per channel "
                f"(got batch*h*w = {count})"
            )
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        count = None
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mean.reshape(bshape).astype(xd.dtype)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * gamma.data.reshape(bshape)
            if training:
                s1 = gx.sum(axis=(0, 2, 3)).reshape(bshape)
                s2 = (gx * xhat).sum(axis=(0, 2, 3)).reshape(bshape)
                gx = (gx - s1 / count - xhat * (s2 / count)) * inv_std.reshape(bshape)
            else:
                gx = gx * inv_std.reshape(bshape)
            x.accumulate(gx)

    return _result(out, (x, gamma, beta), backward, "batch_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _result(out, (x,), backward, "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return _result(a.data + b.data, (a, b), backward, "add")


def add_n(*terms: Tensor) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x.accumulate(g * factor)

    return _result(x.data * x.dtype.type(factor), (x,), backward, "scale")


def total(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x.accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), (x,), backward, "sum")


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Windowed max; ties send the gradient to the first maximum in scan order."""
    _check_rank4(x, "max_pool2d input")
    n, c, h, w_ = x.shape
    oh = conv_output_size(h, kernel, stride, padding)
    ow = conv_output_size(w_, kernel, stride, padding)
    xp = _pad(x.data, padding, value=-np.inf)
    win = _windows(xp, kernel, kernel, stride, oh, ow).reshape(n, c, oh, ow, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for idx in range(kernel * kernel):
            a, b = divmod(idx, kernel)
            gp[:, :, a : a + stride * oh : stride, b : b + stride * ow : stride] += g * (arg == idx)
        x.accumulate(_crop(gp, padding))

    return _result(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def _result(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (),
                  backward=backward if needs else None, op=op)
