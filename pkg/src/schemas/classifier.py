"""
Schemas module.

This module contains Pydantic models for the classification experiment.

Models:
    - ClassifierKind: The three linear model kinds.
    - ClassifierConfig: Kind, regularization strength and solver settings.
    - ClassifierModel: Fitted weights and bias.
    - DesignMatrix: Assembled features, labels and column names.
    - CvPoint: Cross-validation statistics at one regularization strength.
    - EvaluationReport: Test metrics and ROC points.
    - ExperimentRow: One row of the experiment report.
"""
import enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.schemas.cluster import Scaler

CV_COLUMNS = ["alpha", "cv_accuracy", "cv_accuracy_std", "cv_tpr", "cv_tpr_std", "cv_tnr", "cv_tnr_std"]
REPORT_COLUMNS = ["model", "icon"] + CV_COLUMNS + ["test_accuracy", "test_tpr", "test_tnr", "test_auc"]


class ClassifierKind(str, enum.Enum):
    logreg_l1 = "logreg_l1"
    logreg_l2 = "logreg_l2"
    linear_svm = "linear_svm"


class ClassifierConfig(BaseModel):
    """
    Schema for a single fit.

    Attributes:
        kind (ClassifierKind): Model kind.
        alpha (float): Regularization strength, positive.
        tol (float): Relative objective decrease that stops the solver.
        max_iter (int): Iteration cap.
        seed (int): Recorded for provenance; the solvers are deterministic.
    """
    kind: ClassifierKind = ClassifierKind.logreg_l2
    alpha: float = Field(1e-2, gt=0)
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(10000, ge=1)
    seed: int = 0


class ClassifierModel(BaseModel):
    """
    Schema for a fitted linear model.

    Attributes:
        weights (np.ndarray): One weight per design column.
        bias (float): Unpenalized intercept.
        config (ClassifierConfig): The fit configuration.
        converged (bool): False when the iteration cap was hit first.
        objective (float): Training objective of the returned parameters.
        iterations (int): Solver iterations run.
        trace (list[float]): Objective after every accepted iteration (best-so-far for the SVM).
    """
    weights: np.ndarray
    bias: float
    config: ClassifierConfig
    converged: bool = True
    objective: float = 0.0
    iterations: int = 0
    trace: list[float] = Field(default_factory=list)
    model_config = ConfigDict(arbitrary_types_allowed=True)


class DesignMatrix(BaseModel):
    """
    Schema for the assembled design matrix.

    Attributes:
        x (np.ndarray): (n, p) features.
        y (np.ndarray): Labels in {-1, +1}, +1 is malware.
        columns (list[str]): Column names.
        keys (list[str]): Row keys.
        scaler (Scaler): Scaler of the continuous columns, fitted on training rows.
    """
    x: np.ndarray
    y: np.ndarray
    columns: list[str]
    keys: list[str]
    scaler: Scaler
    model_config = ConfigDict(arbitrary_types_allowed=True)


class CvPoint(BaseModel):
    """Cross-validation mean and std of accuracy, TPR and TNR at one alpha."""
    alpha: float
    cv_accuracy: float
    cv_accuracy_std: float
    cv_tpr: float
    cv_tpr_std: float
    cv_tnr: float
    cv_tnr_std: float


class EvaluationReport(BaseModel):
    """
    Schema for test metrics.

    Attributes:
        accuracy (float): Fraction of correct predictions.
        tpr (float): Recall on malware.
        tnr (float): Recall on benign.
        auc (float): Area under the ROC curve.
        roc (list[tuple[float, float]]): (FPR, TPR) points from (0, 0) to (1, 1).
    """
    accuracy: float = Field(ge=0, le=1)
    tpr: float = Field(ge=0, le=1)
    tnr: float = Field(ge=0, le=1)
    auc: float = Field(ge=0, le=1)
    roc: list[tuple[float, float]]


class ExperimentRow(BaseModel):
    """One fit of the experiment: model kind, icon arm, tuned alpha, CV block and test block."""
    model: ClassifierKind
    icon: bool
    alpha: float
    cv_accuracy: float
    cv_accuracy_std: float
    cv_tpr: float
    cv_tpr_std: float
    cv_tnr: float
    cv_tnr_std: float
    test_accuracy: float
    test_tpr: float
    test_tnr: float
    test_auc: float
    converged: bool = True
    num_columns: int = 0

    def report_record(self) -> dict:
        record = self.model_dump(include=set(REPORT_COLUMNS))
        record["model"] = self.model.value
        record["icon"] = "yes" if self.icon else "no"
        return {column: record[column] for column in REPORT_COLUMNS}
