from xmoco.model.encoders import (
    EncoderConfig,
    EncoderParams,
    TowerPair,
    default_encoder_configs,
    embed_matrix,
    encode,
    encode_batch,
    forward,
    init_encoder,
)
from xmoco.model.moco import (
    NegativeQueue,
    StepGradients,
    StepOutputs,
    TwoTowerState,
    info_nce,
    momentum_update,
    queue_push,
    total_loss,
    training_step,
)

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "NegativeQueue",
    "StepGradients",
    "StepOutputs",
    "TowerPair",
    "TwoTowerState",
    "default_encoder_configs",
    "embed_matrix",
    "encode",
    "encode_batch",
    "forward",
    "info_nce",
    "init_encoder",
    "momentum_update",
    "queue_push",
    "total_loss",
    "training_step",
]
