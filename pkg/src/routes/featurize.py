"""
Featurize command module.

Routes:
    - featurize <store> <model> <out_csv>: One 1114-column feature row per stored icon.
"""
import argparse
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from loguru import logger

from src.conf import messages
from src.conf.config import Settings
from src.repository import icons as repository_icons
from src.repository import models as repository_models
from src.repository import tables as repository_tables
from src.schemas.icon import IconRaster
from src.schemas.manifest import Manifest, ManifestFailure
from src.services.errors import BadInput
from src.services.featurize import feature_columns, featurize_icons

CHUNK = 64
MIN_SIDE = 3


def register(subparsers) -> None:
    parser = subparsers.add_parser("featurize", help="compute MC, HOG and AE features of every stored icon")
    parser.add_argument("store", type=Path)
    parser.add_argument("model", type=Path)
    parser.add_argument("out_csv", type=Path)
    parser.set_defaults(handler=featurize)


def manifest_path(out_csv: Path) -> Path:
    return out_csv.with_name(f"{out_csv.stem}.manifest.json")


def featurize(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``featurize``.

    Icons smaller than 3x3 and corrupt store records are skipped and listed in the manifest
    written next to the CSV.

    Args:
        args (argparse.Namespace): ``store``, ``model`` and ``out_csv``.
        settings (Settings): Uses ``COMPOSITE_BACKGROUND`` and ``JOBS``.

    Returns:
        int: 0 on success.

    Raises:
        BadInput: The model is missing or no icon could be featurized.
    """
    if not args.model.is_file():
        raise BadInput(f"{messages.MODEL_MISSING}: {args.model}")
    model = repository_models.load_ae_model(args.model)
    stored, corrupt = repository_icons.load_store(args.store)
    failures = [ManifestFailure(name=key, reason=reason) for key, reason in corrupt]

    usable: list[tuple[str, IconRaster]] = []
    for key, icon in stored:
        if icon.width < MIN_SIDE or icon.height < MIN_SIDE:
            failures.append(ManifestFailure(name=key, reason=messages.IMAGE_TOO_SMALL))
        else:
            usable.append((key, icon))
    for failure in failures:
        logger.warning(f"{failure.name}: {failure.reason}")
    if not usable:
        raise BadInput(f"{messages.EMPTY_STORE}: {args.store}")

    chunks = [usable[start:start + CHUNK] for start in range(0, len(usable), CHUNK)]
    blocks = Parallel(n_jobs=settings.JOBS)(
        delayed(featurize_icons)([icon for _, icon in chunk], model, settings.COMPOSITE_BACKGROUND)
        for chunk in chunks
    )
    keys = [key for key, _ in usable]
    matrix = np.vstack(blocks)
    repository_tables.write_feature_table(keys, matrix, feature_columns(model.architecture.latent_dim), args.out_csv)

    manifest = Manifest(
        command="featurize",
        inputs=len(stored) + len(corrupt),
        processed=len(keys),
        corpus_hash=repository_tables.file_sha256(args.out_csv),
        outputs=[args.out_csv.name],
        failures=failures,
    )
    repository_tables.write_manifest(manifest, manifest_path(args.out_csv))
    logger.info(f"featurize: {len(keys)} rows x {matrix.shape[1]} columns written to {args.out_csv}")
    return 0
