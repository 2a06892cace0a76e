"""
Icon store repository.

Functions take the session as their last argument and never commit partially: ``save_icons``
commits once per batch.
"""
import hashlib
from pathlib import Path

from pydantic import ValidationError
from sqlalchemy import func, select
from sqlalchemy.orm import Session

from src.database.db import DatabaseSessionManager
from src.entity.models import IconRecord
from src.schemas.icon import IconRaster
from src.services.errors import BadInput


def save_icon(key: str, icon: IconRaster, source: str, kind: str, db: Session) -> IconRecord:
    """
    Inserts or replaces the icon stored under ``key``.

    :param key: File SHA-256.
    :type key: str
    :param icon: The primary icon.
    :type icon: IconRaster
    :param source: Input file name.
    :type source: str
    :param kind: ``pe`` or ``ico``.
    :type kind: str
    :param db: The database session.
    :type db: Session
    :return: The stored record.
    :rtype: IconRecord
    """
    record = IconRecord(key=key, icon_sha256=icon.content_hash(), width=icon.width, height=icon.height,
                        pixels=icon.pixels, source=source, kind=kind)
    record = db.merge(record)
    db.commit()
    return record


def save_icons(entries: list[tuple[str, IconRaster, str, str]], db: Session) -> int:
    """Stores many (key, icon, source, kind) entries in one transaction and returns their count."""
    for key, icon, source, kind in entries:
        db.merge(IconRecord(key=key, icon_sha256=icon.content_hash(), width=icon.width, height=icon.height,
                            pixels=icon.pixels, source=source, kind=kind))
    db.commit()
    return len(entries)


def get_icon(key: str, db: Session) -> IconRecord | None:
    return db.execute(select(IconRecord).filter(IconRecord.key == key)).scalar_one_or_none()


def count_icons(db: Session) -> int:
    return db.execute(select(func.count()).select_from(IconRecord)).scalar_one()


def list_records(db: Session) -> list[IconRecord]:
    """Every record ordered by key."""
    return list(db.execute(select(IconRecord).order_by(IconRecord.key)).scalars())


def to_raster(record: IconRecord) -> IconRaster:
    """
    Rebuilds the raster of a record.

    :raises ValidationError: The stored dimensions and pixel blob disagree.
    """
    return IconRaster(width=record.width, height=record.height, pixels=record.pixels)


def load_icons(db: Session) -> tuple[list[tuple[str, IconRaster]], list[tuple[str, str]]]:
    """
    Every decodable icon in key order, plus (key, reason) for records whose blob is corrupt.

    :param db: The database session.
    :type db: Session
    :return: Valid (key, raster) pairs and failures.
    :rtype: tuple[list[tuple[str, IconRaster]], list[tuple[str, str]]]
    """
    icons, failures = [], []
    for record in list_records(db):
        try:
            icons.append((record.key, to_raster(record)))
        except ValidationError as err:
            failures.append((record.key, f"corrupt icon record: {err.errors()[0]['msg']}"))
    return icons, failures


def corpus_hash(icons: list[tuple[str, IconRaster]]) -> str:
    """SHA-256 over the (key, icon hash) pairs in key order."""
    digest = hashlib.sha256()
    for key, icon in sorted(icons, key=lambda item: item[0]):
        digest.update(f"{key}:{icon.content_hash()}\n".encode())
    return digest.hexdigest()


def load_store(path: str | Path) -> tuple[list[tuple[str, IconRaster]], list[tuple[str, str]]]:
    """
    Opens the store file at ``path`` and returns :func:`load_icons` of it.

    :raises BadInput: The store file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise BadInput(f"icon store not found: {path}")
    sessionmanager = DatabaseSessionManager.for_path(path)
    try:
        with sessionmanager.session() as db:
            return load_icons(db)
    finally:
        sessionmanager.close()
