"""
Experiment service module.

Runs every model kind with and without the icon cluster block on one stratified train/test
split: alpha is tuned by stratified k-fold CV on the training part, the model is refitted on the
whole training part at that alpha, and evaluated on the test part.
"""
import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.conf.config import Settings
from src.schemas.classifier import ClassifierConfig, ClassifierKind, CvPoint, EvaluationReport, ExperimentRow
from src.services.classifiers import assemble_design, evaluate, fit_classifier, stratified_split, tune_alpha
from src.services.errors import KeyMismatch

ICON_ARMS = (False, True)


class ExperimentFit(BaseModel):
    """One model kind on one icon arm."""
    row: ExperimentRow
    curve: list[CvPoint]
    report: EvaluationReport
    columns: list[str]
    model_config = ConfigDict(arbitrary_types_allowed=True)


def num_cluster_ids(assignments: pd.DataFrame | None) -> int:
    """Smallest one-hot width covering the assigned ids, used when no cluster model is at hand."""
    if assignments is None or assignments.empty:
        return 0
    return int(assignments["cluster_id"].max()) + 1


def run_experiment(pefile: pd.DataFrame, assignments: pd.DataFrame | None, labels: dict[str, int],
                   settings: Settings, kinds: tuple[ClassifierKind, ...] = tuple(ClassifierKind),
                   num_ids: int | None = None) -> list[ExperimentFit]:
    """
    Fits ``kinds`` x {without icon, with icon}.

    :param pefile: PEfile feature table.
    :type pefile: pd.DataFrame
    :param assignments: Cluster assignments keyed like the PEfile table.
    :type assignments: pd.DataFrame | None
    :param labels: Key to label in {-1, +1}.
    :type labels: dict[str, int]
    :param settings: Seeds, grid, folds, test fraction and solver settings.
    :type settings: Settings
    :param kinds: Model kinds in report order.
    :type kinds: tuple[ClassifierKind, ...]
    :param num_ids: C + K of the cluster model; derived from the assignments when None.
    :type num_ids: int | None
    :return: One fit per (kind, arm), kinds outer, arms inner.
    :rtype: list[ExperimentFit]
    :raises KeyMismatch: Labels or keys do not line up.
    """
    if pefile.empty:
        raise KeyMismatch(f"{KeyMismatch.detail}: no PEfile rows")
    if num_ids is None:
        num_ids = num_cluster_ids(assignments)
    keys = sorted(pefile["sha256"].astype(str))
    missing = [key for key in keys if key not in labels]
    if missing:
        raise KeyMismatch(f"{KeyMismatch.detail}: {len(missing)} rows have no label")
    y = np.array([labels[key] for key in keys], dtype=np.float64)
    train, test = stratified_split(y, settings.TEST_FRACTION, settings.SEED_SPLIT)
    logger.info(f"experiment: {len(train)} train rows, {len(test)} test rows, {num_ids} cluster ids")

    designs = {arm: assemble_design(pefile, assignments, labels, arm, num_ids, train_index=train,
                                    use_outlier_flag=settings.USE_OUTLIER_FLAG) for arm in ICON_ARMS}
    base = ClassifierConfig(tol=settings.SOLVER_TOL, max_iter=settings.SOLVER_MAX_ITER, seed=settings.SEED_CV)
    fits = []
    for kind in kinds:
        for arm in ICON_ARMS:
            design = designs[arm]
            x_train, y_train = design.x[train], design.y[train]
            alpha, curve = tune_alpha(kind, x_train, y_train, settings.alpha_grid, settings.K_FOLDS,
                                      settings.SEED_CV, base, settings.JOBS)
            model = fit_classifier(x_train, y_train, base.model_copy(update={"kind": kind, "alpha": alpha}))
            report = evaluate(model, design.x[test], design.y[test])
            best = next(point for point in curve if point.alpha == alpha)
            row = ExperimentRow(model=kind, icon=arm, test_accuracy=report.accuracy, test_tpr=report.tpr,
                                test_tnr=report.tnr, test_auc=report.auc, converged=model.converged,
                                num_columns=design.x.shape[1], **best.model_dump())
            logger.info(f"{kind.value} icon={'yes' if arm else 'no'}: alpha {alpha:.3g}, "
                        f"test accuracy {report.accuracy:.4f}, auc {report.auc:.4f}")
            fits.append(ExperimentFit(row=row, curve=curve, report=report, columns=design.columns))
    return fits
