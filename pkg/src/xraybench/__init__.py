"""Benchmark harness for binary Normal/Pneumonia chest X-ray classification.

Nine convolutional architectures (a plain baseline CNN plus eight fine-tuned
ImageNet backbones) trained and compared under one reproducible protocol:
min-max normalization and CLAHE preprocessing, stratified splitting with
minority-class oversampling, geometric training-time augmentation, Adam with
learning-rate decay, and confusion-matrix metrics reporting.
"""

__version__ = "0.1.0"

from .augment import AugmentationConfig, TransformDraw, apply_transform, sample_transform
from .dataset import (
    DatasetSplits,
    ImageSample,
    Label,
    LabeledDataset,
    rebalance_by_oversampling,
    scan_dataset,
    stratified_split,
)
from .errors import ConfigurationError, PretrainedWeightsError, TrainingDivergedError
from .evaluate import ConfusionMatrix, MetricsReport, compute_metrics, confusion_matrix
from .preprocess import PreprocessConfig, clahe, min_max_normalize, to_model_input

__all__ = [
    "AugmentationConfig",
    "ConfigurationError",
    "ConfusionMatrix",
    "DatasetSplits",
    "ImageSample",
    "Label",
    "LabeledDataset",
    "MetricsReport",
    "PreprocessConfig",
    "PretrainedWeightsError",
    "TrainingDivergedError",
    "TransformDraw",
    "apply_transform",
    "clahe",
    "compute_metrics",
    "confusion_matrix",
    "min_max_normalize",
    "rebalance_by_oversampling",
    "sample_transform",
    "scan_dataset",
    "stratified_split",
    "to_model_input",
]
