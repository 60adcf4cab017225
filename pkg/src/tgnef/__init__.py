"""Temporal graph network with neighbourhood edge features from causal anonymous walks."""
from .graph import EventLog, NodeFeatures, TemporalAdjacency, build
from .nef import NEFConfig, NEFGenerator
from .tgn import TGN, EmbeddingConfig, ModelConfig
from .training import TrainConfig, train
from .walks import WalkConfig

__all__ = ["EventLog", "NodeFeatures", "TemporalAdjacency", "build", "NEFConfig", "NEFGenerator",
           "TGN", "EmbeddingConfig", "ModelConfig", "TrainConfig", "train", "WalkConfig"]
__version__ = "0.1.0"
