from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from xmoco.constants import Array
from xmoco.errors import NonFiniteError, ShapeError
from xmoco.numkit.tensor import Tensor

LossFunc: TypeAlias = Callable[[Mapping[str, Tensor]], Tensor]


class ParamSet(Mapping[str, Array]):
    """
    Named, read-only float64 parameter tensors iterated in lexicographic name order.

    Updates never mutate a ParamSet; they return a new one with the same names and shapes.

    """

    def __init__(self, tensors: Mapping[str, npt.ArrayLike]) -> None:
        self._tensors: dict[str, Array] = {}
        for name in sorted(tensors):
            array = np.array(tensors[name], dtype=np.float64)
            if not np.isfinite(array).all():
                raise NonFiniteError(f"Parameter {name!r} has non-finite values")
            array.setflags(write=False)
            self._tensors[name] = array

    def __getitem__(self, name: str) -> Array:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        """Represent the set by its names and shapes."""
        return f"{type(self).__name__}({self.shapes()})"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Get the shape of every parameter."""
        return {name: tuple(array.shape) for name, array in self._tensors.items()}

    def with_tensors(self, tensors: Mapping[str, npt.ArrayLike]) -> ParamSet:
        """
        Create a set of the same kind holding new values.

        Subclasses that carry extra metadata override this so that updates preserve it.

        Raises:
            ShapeError: If names or shapes differ from this set.

        """
        self.check_same_layout(tensors)
        return ParamSet(tensors)

    def check_same_layout(self, other: Mapping[str, npt.ArrayLike]) -> None:
        """
        Ensure another mapping has exactly this set's names and shapes.

        Raises:
            ShapeError: On any name or shape difference.

        """
        if set(other) != set(self._tensors):
            missing = sorted(set(self._tensors) - set(other))
            extra = sorted(set(other) - set(self._tensors))
            raise ShapeError(f"Parameter names differ (missing {missing}, unexpected {extra})")
        for name, array in self._tensors.items():
            other_shape = np.shape(other[name])
            if other_shape != array.shape:
                raise ShapeError(f"Parameter {name!r}: expected shape {array.shape}, got {other_shape}")

    def zip_map(self, other: Mapping[str, Array], fn: Callable[[Array, Array], Array]) -> ParamSet:
        """Combine two sets of identical layout parameter by parameter."""
        self.check_same_layout(other)
        return self.with_tensors({name: fn(array, other[name]) for name, array in self._tensors.items()})

    def map(self, fn: Callable[[str, Array], Array]) -> ParamSet:
        """Transform every parameter, keeping names and shapes."""
        return self.with_tensors({name: fn(name, array) for name, array in self._tensors.items()})

    def zeros_like(self) -> ParamSet:
        """Create a set of zeros with this layout."""
        return self.map(lambda _name, array: np.zeros_like(array))

    def prefixed(self, prefix: str) -> dict[str, Array]:
        """Get the parameters keyed by ``prefix + name``."""
        return {f"{prefix}{name}": array for name, array in self._tensors.items()}

    def num_values(self) -> int:
        """Count scalar values across all parameters."""
        return int(sum(array.size for array in self._tensors.values()))


def backward(loss_fn: LossFunc, params: ParamSet) -> ParamSet:
    """
    Differentiate a scalar loss with respect to every parameter of a set.

    The loss function receives one leaf tensor per parameter and must combine them with the operations of
    :mod:`xmoco.numkit.ops` and the arithmetic operators of :class:`Tensor`.

    Args:
        loss_fn (LossFunc): Builds the scalar loss from the parameter tensors.
        params (ParamSet): The point at which to differentiate.

    Returns:
        ParamSet: dL/dθ with the layout of ``params`` (zeros for parameters the loss does not touch).

    Raises:
        NonFiniteError: If the loss is not finite.

    """
    leaves = {name: Tensor(array, requires_grad=True) for name, array in params.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError(f"Loss is not finite: {loss.data}")
    if loss.requires_grad:
        loss.backward()
    return params.with_tensors(
        {name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for name, leaf in leaves.items()},
    )
