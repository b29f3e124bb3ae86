"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    probes: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max over probed coordinates of |analytic - numeric| / max(1, |analytic|).

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes.  ``probes`` limits how many coordinates of
    each input are perturbed (all of them when None).  Inputs should hold
    64-bit data; the ones with ``requires_grad`` set are checked.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    out = op(*inputs)
    proj = rng.standard_normal(out.shape) if out.size > 1 else np.ones(out.shape)

    def objective() -> float:
        return float(np.sum(op(*inputs).data * proj))

    out.backward(proj.astype(out.dtype))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        if probes is None or probes >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=probes, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
