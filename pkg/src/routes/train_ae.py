"""
Train-ae command module.

Routes:
    - train-ae <store> <out_model>: Trains the autoencoder on every stored icon and writes the
      model plus a ``<out_model stem>_trace.csv`` loss trace.
"""
import argparse
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from src.conf import messages
from src.conf.config import Settings
from src.repository import icons as repository_icons
from src.repository import models as repository_models
from src.repository import tables as repository_tables
from src.schemas.autoencoder import DEFAULT_ARCHITECTURE, AeArchitecture, AeConfig
from src.schemas.icon import IconRaster
from src.services.autoencoder import ae_init, ae_train
from src.services.errors import EmptyDataset
from src.services.raster import composite_to_rgb, resize_bilinear


def register(subparsers) -> None:
    parser = subparsers.add_parser("train-ae", help="train the convolutional autoencoder on the icon store")
    parser.add_argument("store", type=Path)
    parser.add_argument("out_model", type=Path)
    parser.set_defaults(handler=train_ae)


def trace_path(out_model: Path) -> Path:
    return out_model.with_name(f"{out_model.stem}_trace.csv")


def training_inputs(icons: list[IconRaster], architecture: AeArchitecture, background: float) -> np.ndarray:
    """Composited icons resized to the network input, stacked NHWC."""
    size = architecture.input_size
    return np.stack([resize_bilinear(composite_to_rgb(icon, background), size, size) for icon in icons])


def train_ae(args: argparse.Namespace, settings: Settings) -> int:
    """
    Handler for ``train-ae``.

    Args:
        args (argparse.Namespace): ``store`` and ``out_model``.
        settings (Settings): ``SEED_AE``, ``AE_LEARNING_RATE``, ``AE_BATCH_SIZE``, ``AE_EPOCHS``
            and ``COMPOSITE_BACKGROUND``.

    Returns:
        int: 0 on success.

    Raises:
        EmptyDataset: The store holds no usable icon.
    """
    stored, corrupt = repository_icons.load_store(args.store)
    for key, reason in corrupt:
        logger.warning(f"{key}: {reason}")
    if not stored:
        raise EmptyDataset(f"{messages.EMPTY_STORE}: {args.store}")

    config = AeConfig(seed=settings.SEED_AE, learning_rate=settings.AE_LEARNING_RATE,
                      batch_size=settings.AE_BATCH_SIZE, epochs=settings.AE_EPOCHS)
    dataset = training_inputs([icon for _, icon in stored], DEFAULT_ARCHITECTURE, settings.COMPOSITE_BACKGROUND)
    model, trace = ae_train(ae_init(config), dataset, config, corpus_hash=repository_icons.corpus_hash(stored))

    repository_models.save_ae_model(model, args.out_model)
    frame = pd.DataFrame({"epoch": np.arange(len(trace)), "mse": trace})
    repository_tables.write_frame(frame, trace_path(args.out_model))
    logger.info(f"train-ae: model written to {args.out_model}, final mse {trace[-1]:.6f}")
    return 0
