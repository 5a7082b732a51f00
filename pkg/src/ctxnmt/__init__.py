"""Context-aware word embeddings for attention-based neural machine translation."""

from .context import ContextKind, IntegrationKind
from .seq2seq import ModelConfig, Seq2Seq, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__all__ = [
    "ContextKind",
    "IntegrationKind",
    "ModelConfig",
    "Seq2Seq",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
