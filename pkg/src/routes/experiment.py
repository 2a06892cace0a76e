"""
Experiment command module.

Routes:
    - experiment <pefile_csv> <assignments_csv> <labels_csv> <out_dir> [--cluster-model PATH]: Runs the six fits and
      writes ``report.csv``, ``report.json``, ``cv_<model>_<icon>.csv`` and ``roc_<model>_<icon>.csv``.
"""
import argparse
import json
from pathlib import Path

import pandas as pd
from loguru import logger

from src.conf.config import Settings
from src.repository import models as repository_models
from src.repository import tables as repository_tables
from src.schemas.classifier import CV_COLUMNS, REPORT_COLUMNS
from src.services.experiment import ExperimentFit, run_experiment

REPORT_CSV = "report.csv"
REPORT_JSON = "report.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="tune, fit and evaluate the three models with and without icons")
    parser.add_argument("pefile_csv", type=Path)
    parser.add_argument("assignments_csv", type=Path)
    parser.add_argument("labels_csv", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--cluster-model", type=Path, default=None,
                        help="cluster model file or directory, defaults to the directory of assignments_csv")
    parser.set_defaults(handler=experiment)


def fit_suffix(fit: ExperimentFit) -> str:
    return f"{fit.row.model.value}_{'yes' if fit.row.icon else 'no'}"


def write_results(fits: list[ExperimentFit], out_dir: Path) -> list[str]:
    """
    Writes the report, CV curves and ROC points of every fit.

    Args:
        fits (list[ExperimentFit]): Fits in report order.
        out_dir (Path): Target directory.

    Returns:
        list[str]: Names of the files written.
    """
    records = [fit.row.report_record() for fit in fits]
    repository_tables.write_frame(pd.DataFrame(records, columns=REPORT_COLUMNS), out_dir / REPORT_CSV)
    document = [dict(record, converged=fit.row.converged, num_columns=fit.row.num_columns)
                for record, fit in zip(records, fits)]
    (out_dir / REPORT_JSON).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    written = [REPORT_CSV, REPORT_JSON]
    for fit in fits:
        cv_name, roc_name = f"cv_{fit_suffix(fit)}.csv", f"roc_{fit_suffix(fit)}.csv"
        curve = pd.DataFrame([point.model_dump(include=set(CV_COLUMNS)) for point in fit.curve], columns=CV_COLUMNS)
        repository_tables.write_frame(curve, out_dir / cv_name)
        repository_tables.write_frame(pd.DataFrame(fit.report.roc, columns=["fpr", "tpr"]), out_dir / roc_name)
        written += [cv_name, roc_name]
    return written


def experiment(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``experiment``.

    Args:
        args (argparse.Namespace): ``pefile_csv``, ``assignments_csv``, ``labels_csv``, ``out_dir`` and
            ``cluster_model``, whose C + K sets the width of the one-hot block.
        settings (Settings): Seeds, alpha grid, folds, test fraction, solver limits and ``JOBS``.

    Returns:
        int: 0 on success.
    """
    pefile = repository_tables.read_pefile_table(args.pefile_csv)
    assignments = repository_tables.read_assignments(args.assignments_csv)
    labels = repository_tables.read_labels(args.labels_csv)
    cluster_model = repository_models.load_cluster_model(args.cluster_model or args.assignments_csv.parent)
    fits = run_experiment(pefile, assignments, labels, settings, num_ids=cluster_model.num_ids)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_results(fits, args.out_dir)
    for fit in fits:
        if not fit.row.converged:
            logger.warning(f"{fit_suffix(fit)}: solver stopped at the iteration cap")
    logger.info(f"experiment: {len(fits)} fits written to {args.out_dir}")
    return 0
