from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array
from xmoco.errors import NonFiniteError, ShapeError

BackwardFunc: TypeAlias = Callable[[Array], Sequence["Array | None"]]
TensorLike: TypeAlias = "Tensor | npt.ArrayLike"


def ordered_matmul(a: Array, b: Array) -> Array:
    """
    Multiply two matrices, accumulating over the contraction index strictly left to right.

    Every output row depends only on the matching row of ``a`` and the result does not depend on
    BLAS threading, so runs are bit-reproducible and batched evaluation is row-for-row identical
    to single-row evaluation.

    Args:
        a (Array): Left operand, shape (m, n).
        b (Array): Right operand, shape (n, p).

    Returns:
        Array: The (m, p) product.

    Raises:
        ShapeError: If the operands are not conforming matrices.

    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A float64 array that remembers how it was computed, so gradients can flow back to its inputs.

    Only the fixed operation set of :mod:`xmoco.numkit.ops` builds graphs; this is not a general
    autodiff engine.

    Attributes:
        data (Array): The values.
        requires_grad (bool): Whether gradients are accumulated for this tensor (or flow through it).
        grad (Array | None): Accumulated gradient of a leaf after :meth:`backward`.
        op (str): Name of the operation that produced the tensor ("" for leaves).

    """

    __array_priority__ = 100

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        requires_grad: bool = False,
        parents: tuple[Tensor, ...] = (),
        backward_fn: BackwardFunc | None = None,
        op: str = "",
    ) -> None:
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.op = op
        self._parents = parents
        self._backward_fn = backward_fn

    def __repr__(self) -> str:
        """Represent the tensor with its shape and producing op."""
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        """Get the shape of the underlying array."""
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        """Get the rank of the underlying array."""
        return int(self.data.ndim)

    @property
    def T(self) -> Tensor:  # noqa: N802
        """Transpose (matrices only)."""
        return transpose(self)

    def item(self) -> float:
        """Get the value of a single-element tensor as a float."""
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __add__(self, other: TensorLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: TensorLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: TensorLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: TensorLike) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: TensorLike) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: TensorLike) -> Tensor:
        return matmul(self, other)

    def backward(self) -> None:
        """
        Propagate gradients from this scalar to every leaf that requires them.

        Raises:
            ShapeError: If the tensor is not a scalar.
            NonFiniteError: If the scalar is NaN or infinite.

        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        if not np.isfinite(self.data).all():
            raise NonFiniteError(f"Cannot differentiate a non-finite value ({self.item()})")

        # Post-order walk; every node lands after all of its inputs
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in node._parents if parent.requires_grad and id(parent) not in visited)

        pending: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._backward_fn is None:
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward_fn(grad), strict=True):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap a value as a constant tensor (tensors pass through unchanged)."""
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(data: Array, parents: tuple[Tensor, ...], backward_fn: BackwardFunc, op: str) -> Tensor:
    """
    Build the output tensor of an operation, recording the graph only when a parent needs gradients.

    Raises:
        NonFiniteError: If the result contains NaN or infinity.

    """
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    if any(parent.requires_grad for parent in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise sum with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return make_result(
        ta.data + tb.data,
        (ta, tb),
        lambda g: (_unbroadcast(g, ta.shape), _unbroadcast(g, tb.shape)),
        "add",
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise difference with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return make_result(
        ta.data - tb.data,
        (ta, tb),
        lambda g: (_unbroadcast(g, ta.shape), _unbroadcast(-g, tb.shape)),
        "sub",
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise product with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    return make_result(
        ta.data * tb.data,
        (ta, tb),
        lambda g: (_unbroadcast(g * tb.data, ta.shape), _unbroadcast(g * ta.data, tb.shape)),
        "mul",
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise quotient with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    quotient = ta.data / tb.data
    return make_result(
        quotient,
        (ta, tb),
        lambda g: (_unbroadcast(g / tb.data, ta.shape), _unbroadcast(-g * quotient / tb.data, tb.shape)),
        "div",
    )


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product with a fixed accumulation order (see :func:`ordered_matmul`)."""
    ta, tb = as_tensor(a), as_tensor(b)
    return make_result(
        ordered_matmul(ta.data, tb.data),
        (ta, tb),
        lambda g: (ordered_matmul(g, tb.data.T), ordered_matmul(ta.data.T, g)),
        "matmul",
    )


def transpose(a: TensorLike) -> Tensor:
    """Transpose a matrix."""
    ta = as_tensor(a)
    if ta.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {ta.shape}")
    return make_result(ta.data.T.copy(), (ta,), lambda g: (g.T,), "transpose")


def reshape(a: TensorLike, shape: tuple[int, ...]) -> Tensor:
    """Reshape without changing the values."""
    ta = as_tensor(a)
    return make_result(ta.data.reshape(shape), (ta,), lambda g: (g.reshape(ta.shape),), "reshape")
