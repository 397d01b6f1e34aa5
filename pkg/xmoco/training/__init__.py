from xmoco.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from xmoco.training.config import TrainConfig
from xmoco.training.optim import AdamState, adamw_step, cosine_lr
from xmoco.training.trainer import Trainer, TrainHistory, fit

__all__ = [
    "AdamState",
    "Checkpoint",
    "TrainConfig",
    "TrainHistory",
    "Trainer",
    "adamw_step",
    "cosine_lr",
    "fit",
    "load_checkpoint",
    "save_checkpoint",
]
