"""
Configuration module for the pipeline.

This module defines the settings using Pydantic's BaseSettings. Values come from the
environment, from a ``.env`` file in the working directory, or from the dotenv file
passed with ``--config``.

Attributes:
    SEED_AE (int): Seed for autoencoder initialization and batch shuffling.
    SEED_CLUSTERING (int): Seed for the outlier k-means.
    SEED_SPLIT (int): Seed for the stratified train/test split.
    SEED_CV (int): Seed for the stratified k-fold assignment.
    AE_LEARNING_RATE (float): Adam learning rate.
    AE_BATCH_SIZE (int): Mini-batch size for autoencoder training.
    AE_EPOCHS (int): Number of autoencoder training epochs.
    COMPOSITE_BACKGROUND (float): Gray level the icon alpha channel is composited onto.
    MIN_CLUSTER_SIZE (int): HDBSCAN minimum cluster size.
    MIN_SAMPLES (int | None): HDBSCAN core-distance neighbour count, defaults to MIN_CLUSTER_SIZE.
    KNN_K (int): Neighbour count used to assign new samples.
    OUTLIER_K_MAX (int): Largest k tried for the outlier k-means.
    OUTLIER_K_CANDIDATES (list[int] | None): Explicit outlier k candidates.
    ALPHA_MIN (float): Smallest regularization strength of the tuning grid.
    ALPHA_MAX (float): Largest regularization strength of the tuning grid.
    ALPHA_POINTS (int): Number of log-spaced grid points.
    K_FOLDS (int): Cross-validation folds.
    TEST_FRACTION (float): Held-out test fraction.
    SOLVER_TOL (float): Relative objective decrease that stops the linear solvers.
    SOLVER_MAX_ITER (int): Iteration cap of the linear solvers.
    USE_OUTLIER_FLAG (bool): Append the outlier flag column to the icon block.
    JOBS (int): Worker processes for file-level parallelism.
    LOG_LEVEL (str): Loguru level of the stderr sink.
"""
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ConfigDict, field_validator
from pydantic_settings import BaseSettings

LOG_LEVELS = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseSettings):
    SEED_AE: int = 0
    SEED_CLUSTERING: int = 0
    SEED_SPLIT: int = 0
    SEED_CV: int = 0
    AE_LEARNING_RATE: float = 1e-3
    AE_BATCH_SIZE: int = 16
    AE_EPOCHS: int = 50
    COMPOSITE_BACKGROUND: float = 1.0
    MIN_CLUSTER_SIZE: int = 15
    MIN_SAMPLES: int | None = None
    KNN_K: int = 5
    OUTLIER_K_MAX: int = 50
    OUTLIER_K_CANDIDATES: list[int] | None = None
    ALPHA_MIN: float = 1e-5
    ALPHA_MAX: float = 1.0
    ALPHA_POINTS: int = 31
    K_FOLDS: int = 4
    TEST_FRACTION: float = 0.2
    SOLVER_TOL: float = 1e-8
    SOLVER_MAX_ITER: int = 10000
    USE_OUTLIER_FLAG: bool = False
    JOBS: int = 1
    LOG_LEVEL: str = "INFO"

    @field_validator("TEST_FRACTION")
    @classmethod
    def validate_test_fraction(cls, v: Any):
        if not 0.0 < v < 1.0:
            raise ValueError("test fraction must lie strictly between 0 and 1")
        return v

    @field_validator("K_FOLDS")
    @classmethod
    def validate_k_folds(cls, v: Any):
        if v < 2:
            raise ValueError("at least 2 folds are required")
        return v

    @field_validator("AE_LEARNING_RATE", "ALPHA_MIN", "ALPHA_MAX")
    @classmethod
    def validate_positive(cls, v: Any):
        if v <= 0:
            raise ValueError("value must be positive")
        return v

    @field_validator("AE_BATCH_SIZE", "AE_EPOCHS", "KNN_K", "ALPHA_POINTS", "JOBS", "SOLVER_MAX_ITER")
    @classmethod
    def validate_at_least_one(cls, v: Any):
        if v < 1:
            raise ValueError("value must be at least 1")
        return v

    @field_validator("COMPOSITE_BACKGROUND")
    @classmethod
    def validate_background(cls, v: Any):
        if not 0.0 <= v <= 1.0:
            raise ValueError("background must be a gray level in [0, 1]")
        return v

    @field_validator("MIN_CLUSTER_SIZE")
    @classmethod
    def validate_min_cluster_size(cls, v: Any):
        if v < 2:
            raise ValueError("min cluster size must be at least 2")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: Any):
        v = str(v).upper()
        if v not in LOG_LEVELS:
            raise ValueError(f"log level must be one of {', '.join(LOG_LEVELS)}")
        return v

    model_config = ConfigDict(extra='ignore', env_file=".env", env_file_encoding="utf-8")  # noqa

    @property
    def alpha_grid(self) -> list[float]:
        """Log-spaced regularization grid, ascending."""
        return [float(a) for a in np.logspace(np.log10(self.ALPHA_MIN), np.log10(self.ALPHA_MAX), self.ALPHA_POINTS)]

    def with_seed(self, seed: int) -> "Settings":
        return self.model_copy(update={"SEED_AE": seed, "SEED_CLUSTERING": seed, "SEED_SPLIT": seed, "SEED_CV": seed})


def load_settings(path: str | Path | None = None) -> Settings:
    """
    Builds the settings, reading the given dotenv file instead of ``.env`` when a path is passed.

    Args:
        path (str | Path | None): Optional dotenv-format configuration file.

    Returns:
        Settings: The validated settings.
    """
    if path is None:
        return Settings()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return Settings(_env_file=path)
