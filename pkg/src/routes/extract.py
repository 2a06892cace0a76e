"""
Extract command module.

This module defines the ``extract`` subcommand: every file of an input directory is parsed as a
PE or ICO file, the PEfile features go to ``pefile_features.csv``, primary icons go to the
``icons.sqlite`` store, and per-file failures go to ``manifest.json``.

Routes:
    - extract <in_dir> <out_dir>: Builds the PEfile table and the icon store.
"""
import argparse
from pathlib import Path

from joblib import Parallel, delayed
from loguru import logger

from src.conf import messages
from src.conf.config import Settings
from src.database.db import DatabaseSessionManager
from src.repository import icons as repository_icons
from src.repository import tables as repository_tables
from src.schemas.manifest import Manifest, ManifestFailure
from src.schemas.pe import IngestResult
from src.services.errors import BadInput
from src.services.pe_ingest import ingest_file

PEFILE_TABLE = "pefile_features.csv"
ICON_STORE = "icons.sqlite"
MANIFEST = "manifest.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("extract", help="parse PE/ICO files into the PEfile table and icon store")
    parser.add_argument("in_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.set_defaults(handler=extract)


def _ingest_path(path: Path) -> IngestResult:
    return ingest_file(path.name, path.read_bytes())


def extract(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``extract``.

    Args:
        args (argparse.Namespace): ``in_dir`` and ``out_dir``.
        settings (Settings): Uses ``JOBS``.

    Returns:
        int: 0 when at least one file was processed.

    Raises:
        BadInput: The directory is missing or empty, or no file could be processed.
    """
    in_dir, out_dir = args.in_dir, args.out_dir
    if not in_dir.is_dir():
        raise BadInput(f"{messages.INPUT_DIR_MISSING}: {in_dir}")
    paths = sorted(path for path in in_dir.iterdir() if path.is_file())
    if not paths:
        raise BadInput(f"{messages.NO_FILES_PROCESSED}: {in_dir} is empty")

    results = Parallel(n_jobs=settings.JOBS)(delayed(_ingest_path)(path) for path in paths)
    kept: dict[str, IngestResult] = {}
    failures = []
    for result in results:
        if not result.processed:
            logger.warning(f"{result.name}: {result.error}")
            failures.append(ManifestFailure(name=result.name, reason=result.error))
        elif result.key in kept:
            logger.info(f"{result.name}: duplicate of {kept[result.key].name}")
        else:
            kept[result.key] = result
    if not kept:
        raise BadInput(f"{messages.NO_FILES_PROCESSED}: {len(failures)} failure(s)")

    out_dir.mkdir(parents=True, exist_ok=True)
    pefile_rows = [(key, result.features) for key, result in kept.items() if result.features is not None]
    repository_tables.write_pefile_table(pefile_rows, out_dir / PEFILE_TABLE)

    store_path = out_dir / ICON_STORE
    store_path.unlink(missing_ok=True)
    entries = [(key, result.icon, result.name, result.kind)
               for key, result in sorted(kept.items()) if result.icon is not None]
    sessionmanager = DatabaseSessionManager.for_path(store_path)
    try:
        with sessionmanager.session() as db:
            repository_icons.save_icons(entries, db)
            stored, _ = repository_icons.load_icons(db)
    finally:
        sessionmanager.close()

    manifest = Manifest(
        command="extract",
        inputs=len(paths),
        processed=len(kept),
        icons_decoded=sum(result.icons_decoded for result in results),
        icons_failed=sum(result.icons_failed for result in results),
        corpus_hash=repository_icons.corpus_hash(stored),
        outputs=[PEFILE_TABLE, ICON_STORE],
        failures=failures,
    )
    repository_tables.write_manifest(manifest, out_dir / MANIFEST)
    logger.info(f"extract: {len(kept)} of {len(paths)} files processed, {len(pefile_rows)} PEfile rows, "
                f"{len(entries)} icons stored")
    return 0
