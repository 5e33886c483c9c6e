"""rerankkit: class-specific re-ranking of object-detection proposals.

Pipeline: load (or synthesize) scenes with segmentation masks, per-pixel
heights, proposals, and labels; extract 7-component per-proposal features;
train a class-specific linear scorer with a slack-rescaled structured SVM
solved by cutting planes; re-rank by dot product; evaluate with recall
curves and average recall.
"""

from .core import BoundingBox, GroundTruthObject, Proposal, Scene, clip_to_pixels, iou
from .errors import (
    DataFormatError,
    InvalidArgumentError,
    RerankkitError,
    SolverFailureError,
    SynthesisError,
)
from .features import NUM_FEATURES, FeatureConfig, extract, extract_all
from .model import ScoringModel, load_model, rerank, save_model, score
from .train import TrainConfig, TrainingExample, build_examples

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Proposal",
    "GroundTruthObject",
    "Scene",
    "iou",
    "clip_to_pixels",
    "NUM_FEATURES",
    "FeatureConfig",
    "extract",
    "extract_all",
    "ScoringModel",
    "score",
    "rerank",
    "save_model",
    "load_model",
    "TrainConfig",
    "TrainingExample",
    "build_examples",
    "RerankkitError",
    "InvalidArgumentError",
    "DataFormatError",
    "SolverFailureError",
    "SynthesisError",
    "__version__",
]
