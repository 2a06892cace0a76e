"""
Synth command module.

Routes:
    - synth <out_dir> [--samples N] [--corpus-seed S]: Writes a seeded labelled corpus of PE
      files plus ``labels.csv`` (key, label, name, template).
"""
import argparse
import hashlib
from pathlib import Path

import pandas as pd
from loguru import logger

from src.conf.config import Settings
from src.repository import tables as repository_tables
from src.services.errors import BadInput
from src.services.synthetic import synthetic_corpus

LABELS = "labels.csv"


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="write a synthetic labelled PE corpus")
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--samples", type=int, default=400)
    parser.add_argument("--corpus-seed", type=int, default=0)
    parser.add_argument("--iconless-rate", type=float, default=0.05)
    parser.set_defaults(handler=synth)


def synth(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``synth``. Files go to ``<out_dir>/files``, the input directory of ``extract``;
    ``labels.csv`` goes to ``out_dir``.

    Args:
        args (argparse.Namespace): ``out_dir``, ``samples``, ``corpus_seed`` and ``iconless_rate``.
        settings (Settings): Unused.

    Returns:
        int: 0 on success.
    """
    if args.samples < 1:
        raise BadInput("--samples must be at least 1")
    samples = synthetic_corpus(args.samples, seed=args.corpus_seed, iconless_rate=args.iconless_rate)
    files = args.out_dir / "files"
    files.mkdir(parents=True, exist_ok=True)
    records = []
    for sample in samples:
        (files / sample.name).write_bytes(sample.data)
        records.append({"key": hashlib.sha256(sample.data).hexdigest(),
                        "label": "malware" if sample.label > 0 else "benign",
                        "name": sample.name, "template": sample.template})
    frame = pd.DataFrame(records).sort_values("key", kind="stable")
    repository_tables.write_frame(frame, args.out_dir / LABELS)
    malware = sum(sample.label > 0 for sample in samples)
    logger.info(f"synth: {len(samples)} files ({malware} malware) written to {files}")
    return 0
