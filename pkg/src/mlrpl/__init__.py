"""Multi-label recognition with partial labels: semantic decoupling over frozen
encoders, category-specific learnable prompts, partial asymmetric loss, and a
full masking / training / evaluation / visualization harness."""

__version__ = "0.1.0"

from .data import DatasetIndex, MaskSpec, apply_partial_mask, load_dataset, make_synthetic_dataset
from .decoupling import SemanticDecoupling
from .losses import LossConfig, predict_scores, total_loss
from .metrics import MetricsReport, average_precision, binarize, build_report, f1_metrics
from .prompts import PromptBank
from .training import RecognitionModel, TrainConfig, build_synthetic_model, evaluate, lr_at, train

__all__ = [
    "DatasetIndex", "MaskSpec", "apply_partial_mask", "load_dataset",
    "make_synthetic_dataset", "SemanticDecoupling", "LossConfig",
    "predict_scores", "total_loss", "MetricsReport", "average_precision",
    "binarize", "build_report", "f1_metrics", "PromptBank",
    "RecognitionModel", "TrainConfig", "build_synthetic_model", "evaluate",
    "lr_at", "train",
]
