"""Adam with bias correction."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .tensor import Parameter


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, Optional[np.ndarray]],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update ``params`` and ``state`` in place.

    ``state`` holds ``step`` plus per-name first/second moments under ``m``
    and ``v``; missing moments start at zero.  Parameters whose gradient is
    None are left alone.
    """
    t = state.get("step", 0) + 1
    state["step"] = t
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = m_all.setdefault(name, np.zeros_like(value))
        v = v_all.setdefault(name, np.zeros_like(value))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / value.dtype.type(c2)) + value.dtype.type(eps)
        value -= value.dtype.type(lr / c1) * m / denom


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: Dict[str, Parameter] = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {"step": 0, "m": {}, "v": {}}

    def step(self, lr: Optional[float] = None) -> None:
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
            self.lr if lr is None else lr,
            *self.betas,
            self.eps,
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
