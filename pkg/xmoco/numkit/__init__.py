"""Minimal float64 tensor core: the fixed operation set used by the encoders and the contrastive loss."""

from xmoco.numkit.ops import concat, dot, exp, l2_normalize, linear, log, logsumexp, relu, total
from xmoco.numkit.params import ParamSet, backward
from xmoco.numkit.tensor import Tensor, as_tensor, ordered_matmul

__all__ = [
    "ParamSet",
    "Tensor",
    "as_tensor",
    "backward",
    "concat",
    "dot",
    "exp",
    "l2_normalize",
    "linear",
    "log",
    "logsumexp",
    "ordered_matmul",
    "relu",
    "total",
]
