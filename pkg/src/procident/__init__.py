"""Infer which program produced a process's system-event trace.

Traces become strings over an event alphabet, strings become sparse
transition-probability vectors, an uncentered truncated SVD reduces them, and
a Minkowski k-NN assigns a program name. A mismatch with the process's own
executable name is reported as an anomaly.
"""
from procident.alphabet import AlphabetConfig, EventString, TraceAlphabetizer, default_config
from procident.anomaly import AnomalyVerdict, detect_mismatch
from procident.dimred import LatentSemanticProjector, ProjectionBasis, fit_projection, project
from procident.evaluation import ScoreReport, grid_search, score_report
from procident.knn import Hyperparameters, MinkowskiKNNClassifier, Prediction
from procident.markov import MarkovFeaturizer
from procident.pipeline import (
    ProcessClassifier,
    TrainedModel,
    classify_traces,
    persist_model,
    restore_model,
    train_model,
)

__version__ = "0.1.0"

__all__ = [
    "AlphabetConfig",
    "AnomalyVerdict",
    "EventString",
    "Hyperparameters",
    "LatentSemanticProjector",
    "MarkovFeaturizer",
    "MinkowskiKNNClassifier",
    "Prediction",
    "ProcessClassifier",
    "ProjectionBasis",
    "ScoreReport",
    "TraceAlphabetizer",
    "TrainedModel",
    "classify_traces",
    "default_config",
    "detect_mismatch",
    "fit_projection",
    "grid_search",
    "persist_model",
    "project",
    "restore_model",
    "score_report",
    "train_model",
]
