"""Character segmentation of text-line images with a width-restoring FCN."""

from __future__ import annotations

from .dataset import Dataset, load_dataset
from .errors import (
    BoundsError,
    ConfigurationError,
    DataError,
    DegenerateBatchError,
    FcnsegError,
    FormatError,
    ShapeError,
    StateError,
)
from .evalmetric import MatchParams, MatchReport, evaluate_dataset, match_and_score
from .model import ArchitectureSpec, FcnModel, build_fcn, forward, load_checkpoint, predict, save_checkpoint
from .segmenter import PostprocParams, proj_segment, segment_line
from .synth import DisturbanceParams, GlyphAtlas, generate_dataset, make_toy_atlas
from .trainloop import LossWeights, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "BoundsError",
    "ConfigurationError",
    "DataError",
    "Dataset",
    "DegenerateBatchError",
    "DisturbanceParams",
    "FcnModel",
    "FcnsegError",
    "FormatError",
    "GlyphAtlas",
    "LossWeights",
    "MatchParams",
    "MatchReport",
    "PostprocParams",
    "ShapeError",
    "StateError",
    "TrainConfig",
    "build_fcn",
    "evaluate_dataset",
    "forward",
    "generate_dataset",
    "load_checkpoint",
    "load_dataset",
    "make_toy_atlas",
    "match_and_score",
    "predict",
    "proj_segment",
    "save_checkpoint",
    "segment_line",
    "train",
]
