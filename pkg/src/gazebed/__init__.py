"""Gaze-enhanced crossmodal emotion embeddings."""

from .estimator import CrossmodalEmotionClassifier, check_utterances
from .evaluation import Metrics, evaluate, micro_f1, per_class_f1
from .gaze_features import FEATURE_NAMES, GazeConfig, GazeFeatureExtractor, extract_averaged, extract_windowed
from .ingest import EMOTIONS, FrameRecord, Utterance, load_dataset, parse_tracker_csv
from .model import CrossmodalNet, ModelConfig
from .synthetic import SynthConfig, generate
from .trainer import FittedModel, TrainConfig, load_checkpoint, prepare_features, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CrossmodalEmotionClassifier",
    "CrossmodalNet",
    "EMOTIONS",
    "FEATURE_NAMES",
    "FittedModel",
    "FrameRecord",
    "GazeConfig",
    "GazeFeatureExtractor",
    "Metrics",
    "ModelConfig",
    "SynthConfig",
    "TrainConfig",
    "Utterance",
    "check_utterances",
    "evaluate",
    "extract_averaged",
    "extract_windowed",
    "generate",
    "load_checkpoint",
    "load_dataset",
    "micro_f1",
    "parse_tracker_csv",
    "per_class_f1",
    "prepare_features",
    "save_checkpoint",
    "train",
]
