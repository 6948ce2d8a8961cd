from .checkpoint import checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint
from .expose import ExposeConfig, expose_features, expose_forward
from .student import EXPOSE, TRANSFORMER, StudentModel, init_params, predict
from .training import TrainHistory, train
from .transformer import TinyTransformerConfig, transformer_forward

__all__ = [
    "EXPOSE",
    "TRANSFORMER",
    "ExposeConfig",
    "StudentModel",
    "TinyTransformerConfig",
    "TrainHistory",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
    "expose_features",
    "expose_forward",
    "init_params",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
    "transformer_forward",
]
