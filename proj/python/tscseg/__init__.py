"""Hierarchical transition state clustering for robot demonstrations."""

from ._core import (
    Error,
    Model,
    Session,
    frame_accuracy,
    generate_dataset,
    gmm_fit,
    gmm_posterior,
    run_cli,
    select_k,
    silhouette_score,
    train,
)

__all__ = [
    "Error",
    "Model",
    "Session",
    "frame_accuracy",
    "generate_dataset",
    "gmm_fit",
    "gmm_posterior",
    "run_cli",
    "select_k",
    "silhouette_score",
    "train",
]
