"""LSTM-CNN classification of Parkinson's disease drawing traces."""

from .data import DrawSequence, parse_sequence, read_sequences, validate_sequence
from .estimator import LstmCnnClassifier, PatchExtractor, SequenceClassifier
from .metrics import ConfusionMatrix, compute_metrics, confusion, evaluate, majority_vote
from .model import ModelConfig, build_model, count_params, model_backward, model_forward
from .preprocess import minmax_normalize, plan_balanced_strides, segment, velocity_features
from .synth import SynthConfig, generate_corpus, generate_sequence
from .train import TrainConfig, adam_step, load_checkpoint, save_checkpoint, train_model

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix",
    "DrawSequence",
    "LstmCnnClassifier",
    "ModelConfig",
    "PatchExtractor",
    "SequenceClassifier",
    "SynthConfig",
    "TrainConfig",
    "adam_step",
    "build_model",
    "compute_metrics",
    "confusion",
    "count_params",
    "evaluate",
    "generate_corpus",
    "generate_sequence",
    "load_checkpoint",
    "majority_vote",
    "minmax_normalize",
    "model_backward",
    "model_forward",
    "parse_sequence",
    "plan_balanced_strides",
    "read_sequences",
    "save_checkpoint",
    "segment",
    "train_model",
    "validate_sequence",
    "velocity_features",
]
