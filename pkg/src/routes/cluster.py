"""
Cluster and assign command module.

Routes:
    - cluster <features_csv> <out_dir>: Builds the cluster model and the training assignments.
    - assign <features_csv> <cluster_dir> <out_csv>: Assigns new feature rows with a built model.
"""
import argparse
from pathlib import Path

from loguru import logger

from src.conf.config import Settings
from src.repository import models as repository_models
from src.repository import tables as repository_tables
from src.schemas.cluster import ClusterParams
from src.services.clustering import assign_many, build_cluster_model

ASSIGNMENTS = "assignments.csv"


def register(subparsers) -> None:
    parser = subparsers.add_parser("cluster", help="HDBSCAN plus outlier k-means over the icon features")
    parser.add_argument("features_csv", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.set_defaults(handler=cluster)

    parser = subparsers.add_parser("assign", help="assign feature rows to clusters of a built model")
    parser.add_argument("features_csv", type=Path)
    parser.add_argument("cluster_dir", type=Path)
    parser.add_argument("out_csv", type=Path)
    parser.set_defaults(handler=assign)


def cluster_params(settings: Settings) -> ClusterParams:
    return ClusterParams(min_cluster_size=settings.MIN_CLUSTER_SIZE, min_samples=settings.MIN_SAMPLES,
                         knn_k=settings.KNN_K, outlier_k_max=settings.OUTLIER_K_MAX,
                         outlier_k_candidates=settings.OUTLIER_K_CANDIDATES, seed=settings.SEED_CLUSTERING)


def cluster(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``cluster``.

    Writes ``cluster_model.json``, its reference sidecar and ``assignments.csv`` with the stored
    final ID of every training row; the outlier flag marks rows HDBSCAN left unclaimed.

    Args:
        args (argparse.Namespace): ``features_csv`` and ``out_dir``.
        settings (Settings): Clustering parameters and ``SEED_CLUSTERING``.

    Returns:
        int: 0 on success.
    """
    keys, matrix, _ = repository_tables.read_feature_table(args.features_csv)
    model = build_cluster_model(matrix, cluster_params(settings), keys=keys,
                                corpus_hash=repository_tables.file_sha256(args.features_csv))
    repository_models.save_cluster_model(model, args.out_dir)
    repository_tables.write_assignments(keys, model.final_ids, model.outlier_flags, args.out_dir / ASSIGNMENTS)
    logger.info(f"cluster: C={model.num_dense_clusters}, K={model.num_outlier_clusters} for {len(keys)} icons")
    return 0


def assign(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``assign``.

    Args:
        args (argparse.Namespace): ``features_csv``, ``cluster_dir`` and ``out_csv``.
        settings (Settings): Unused, the model carries its own parameters.

    Returns:
        int: 0 on success.
    """
    model = repository_models.load_cluster_model(args.cluster_dir)
    keys, matrix, _ = repository_tables.read_feature_table(args.features_csv)
    ids, flags = assign_many(model, matrix)
    repository_tables.write_assignments(keys, ids, flags, args.out_csv)
    logger.info(f"assign: {len(keys)} rows, {int(flags.sum())} outliers")
    return 0
