"""Reverse-mode differentiation over numpy arrays.

Every op creates a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to parent gradients.  ``backward``
walks the graph in reverse topological order; a node used by several
consumers sums the contributions it receives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an op's contract."""


# Flipped on by ``check_finite``; every op then asserts its output is finite.
_DEBUG_FINITE = False


def set_debug_finite(flag: bool) -> None:
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: Optional[str] = None,
        op: str = "leaf",
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name
        self.op = op
        if _DEBUG_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values produced by {op!r}")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Back-propagate from this node; without ``grad`` it must be a scalar."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed once pushed upstream
                if node._parents and node is not self:
                    node.grad = None

    # arithmetic sugar, limited to what losses need
    def __add__(self, other):
        from .functional import add

        return add(self, as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, scalar):
        from .functional import scale

        return scale(self, float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        from .functional import scale

        return scale(self, 1.0 / float(scalar))

    def sum(self) -> "Tensor":
        from .functional import total

        return total(self)


class Parameter(Tensor):
    """A trainable leaf; ``name`` is its dotted path inside a model."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name, op="param")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
