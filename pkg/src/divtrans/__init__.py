"""Diverse decoding by sampling cross-attention heads, on a small numpy Transformer."""

from .artifact import VERSION as __version__
from .decoding import DecodePolicy, HypothesisGroup, diverse_decode
from .errors import InvalidArgumentError, InvalidStateError, UndefinedDEQError
from .metrics import MetricsReport, corpus_bleu, deq, pairwise_bleu
from .model import Checkpoint, ModelConfig, Transformer, load_checkpoint, save_checkpoint

__all__ = [
    "Checkpoint", "DecodePolicy", "HypothesisGroup", "InvalidArgumentError", "InvalidStateError",
    "MetricsReport", "ModelConfig", "Transformer", "UndefinedDEQError", "__version__", "corpus_bleu",
    "deq", "diverse_decode", "load_checkpoint", "pairwise_bleu", "save_checkpoint",
]
