from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from xmoco.constants import Array
from xmoco.errors import InvalidArgumentError, NonFiniteError
from xmoco.numkit import ParamSet

LOGGER = logging.getLogger(__name__)

NO_DECAY_SUFFIXES = ("bias", "log_tau")  # Biases and the temperature gain are never decayed


def is_decayed(name: str) -> bool:
    """Determine if weight decay applies to a parameter."""
    return not name.endswith(NO_DECAY_SUFFIXES)


@dataclass(frozen=True)
class AdamState:
    """
    Moment estimates of the adaptive optimizer.

    Attributes:
        step (int): Number of updates applied so far.
        first (ParamSet): Running mean of the gradients.
        second (ParamSet): Running mean of the squared gradients.

    """

    step: int
    first: ParamSet
    second: ParamSet

    @classmethod
    def zeros(cls, params: ParamSet) -> AdamState:
        """Create the state before the first update."""
        return cls(0, params.zeros_like(), params.zeros_like())


def adamw_step(
    params: ParamSet,
    grads: ParamSet,
    state: AdamState,
    *,
    lr: float,
    betas: tuple[float, float],
    eps: float,
    weight_decay: float,
) -> tuple[ParamSet, AdamState]:
    """
    One Adam update with decoupled weight decay.

    Decay shrinks decayed parameters by (1 - lr * wd) before the adaptive step and never enters the moment
    estimates.

    Args:
        params (ParamSet): Current parameters.
        grads (ParamSet): Gradients with the same layout.
        state (AdamState): Moments after ``state.step`` updates.
        lr (float): Learning rate for this step.
        betas (tuple[float, float]): Decay rates of the first and second moments.
        eps (float): Denominator floor.
        weight_decay (float): Decoupled decay coefficient.

    Returns:
        tuple[ParamSet, AdamState]: The updated parameters and moments.

    Raises:
        NonFiniteError: If a gradient holds NaN or infinity.
        ShapeError: If the layouts differ.

    """
    params.check_same_layout(grads)
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"Gradient of {name!r} is not finite")
    beta1, beta2 = betas
    step = state.step + 1
    first = state.first.zip_map(grads, lambda m, g: beta1 * m + (1.0 - beta1) * g)
    second = state.second.zip_map(grads, lambda v, g: beta2 * v + (1.0 - beta2) * g * g)
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step

    def update(name: str, theta: Array) -> Array:
        if weight_decay and is_decayed(name):
            theta = theta - lr * weight_decay * theta
        m_hat = first[name] / correction1
        v_hat = second[name] / correction2
        return theta - lr * m_hat / (np.sqrt(v_hat) + eps)

    return params.map(update), AdamState(step, first, second)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """
    Cosine-decayed learning rate without warmup.

    Args:
        step (int): Position in the schedule, 0 <= step <= total_steps.
        total_steps (int): Schedule length.
        base_lr (float): Rate at step 0.

    Returns:
        float: 0.5 * base_lr * (1 + cos(pi * step / total_steps)); exactly 0 at the end.

    Raises:
        InvalidArgumentError: If total_steps is 0 or step is out of range.

    """
    if total_steps <= 0:
        raise InvalidArgumentError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise InvalidArgumentError(f"step must lie in [0, {total_steps}], got {step}")
    if step == total_steps:
        return 0.0
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))
