"""Densely-connected recurrent co-attentive network (DRCN) for sentence matching,
built on a small numpy reverse-mode autodiff engine."""

from .config import ConfigError, ModelConfig, TrainConfig, preset
from .model import DRCN
from .text import SentencePair, Vocab

__all__ = ["DRCN", "ModelConfig", "TrainConfig", "ConfigError", "preset", "SentencePair", "Vocab"]
__version__ = "0.1.0"
