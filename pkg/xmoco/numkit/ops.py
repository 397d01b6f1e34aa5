from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from xmoco.constants import Array, NumericConfig
from xmoco.errors import DegenerateEmbeddingError, ShapeError
from xmoco.numkit.tensor import Tensor, TensorLike, as_tensor, make_result, matmul, reshape, transpose


def linear(x: TensorLike, weight: TensorLike, bias: TensorLike) -> Tensor:
    """
    Affine map y = Wx + b for a vector, or row-wise for a batch of vectors.

    Args:
        x (TensorLike): Input of shape (n,) or (batch, n).
        weight (TensorLike): Weight matrix of shape (m, n).
        bias (TensorLike): Bias vector of shape (m,).

    Returns:
        Tensor: Output of shape (m,) or (batch, m).

    Raises:
        ShapeError: If the shapes do not conform.

    """
    tx, tw, tb = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if tw.ndim != 2 or tb.ndim != 1 or tw.shape[0] != tb.shape[0] or tx.ndim not in {1, 2} or tx.shape[-1] != tw.shape[1]:
        raise ShapeError(f"linear: input {tx.shape} does not conform to weight {tw.shape} and bias {tb.shape}")
    if tx.ndim == 1:
        return reshape(matmul(reshape(tx, (1, tx.shape[0])), transpose(tw)) + tb, (tw.shape[0],))
    return matmul(tx, transpose(tw)) + tb


def relu(x: TensorLike) -> Tensor:
    """Elementwise max(0, x)."""
    tx = as_tensor(x)
    mask = tx.data > 0
    return make_result(np.where(mask, tx.data, 0.0), (tx,), lambda g: (g * mask,), "relu")


def l2_normalize(v: TensorLike, eps: float = NumericConfig.NORM_EPS) -> Tensor:
    """
    Scale a vector (or each row of a matrix) to unit L2 norm.

    Args:
        v (TensorLike): Vector (d,) or matrix (rows, d).
        eps (float): Norms at or below this are degenerate.

    Returns:
        Tensor: The normalized input.

    Raises:
        DegenerateEmbeddingError: If a norm is not above eps. The index of the first offending row is attached
            for matrices.

    """
    tv = as_tensor(v)
    norms = np.sqrt(np.sum(tv.data * tv.data, axis=-1, keepdims=True))
    degenerate = np.flatnonzero(norms.reshape(-1) <= eps)
    if degenerate.size:
        index = int(degenerate[0]) if tv.ndim > 1 else None
        raise DegenerateEmbeddingError(
            f"Cannot normalize a vector with norm {float(norms.reshape(-1)[degenerate[0]]):.3e} (<= {eps:g})",
            index=index,
        )
    unit = tv.data / norms

    def backward_fn(g: Array) -> tuple[Array]:
        return ((g - unit * np.sum(g * unit, axis=-1, keepdims=True)) / norms,)

    return make_result(unit, (tv,), backward_fn, "l2_normalize")


def dot(a: TensorLike, b: TensorLike) -> Tensor:
    """Dot product over the last axis (a scalar for vectors, one value per row for matrices)."""
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.shape != tb.shape:
        raise ShapeError(f"dot: shapes {ta.shape} and {tb.shape} differ")
    return make_result(
        np.sum(ta.data * tb.data, axis=-1),
        (ta, tb),
        lambda g: (g[..., None] * tb.data, g[..., None] * ta.data),
        "dot",
    )


def exp(x: TensorLike) -> Tensor:
    """Elementwise exponential."""
    tx = as_tensor(x)
    out = np.exp(tx.data)
    return make_result(out, (tx,), lambda g: (g * out,), "exp")


def log(x: TensorLike) -> Tensor:
    """Elementwise natural logarithm."""
    tx = as_tensor(x)
    return make_result(np.log(tx.data), (tx,), lambda g: (g / tx.data,), "log")


def logsumexp(x: TensorLike, axis: int = -1) -> Tensor:
    """
    Numerically stable log(sum(exp(x))) along an axis.

    The maximum is factored out first, so a single-element slice returns its value exactly.
    """
    tx = as_tensor(x)
    peak = np.max(tx.data, axis=axis, keepdims=True)
    shifted = np.exp(tx.data - peak)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = np.squeeze(peak + np.log(total), axis=axis)
    softmax = shifted / total
    return make_result(out, (tx,), lambda g: (np.expand_dims(g, axis) * softmax,), "logsumexp")


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    """Concatenate tensors along an existing axis."""
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [part.shape[axis] for part in parts]
    splits = np.cumsum(sizes)[:-1]
    return make_result(
        np.concatenate([part.data for part in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def total(x: TensorLike) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    tx = as_tensor(x)
    return make_result(np.asarray(np.sum(tx.data)), (tx,), lambda g: (np.broadcast_to(g, tx.shape).copy(),), "total")
