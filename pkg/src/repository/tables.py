"""
CSV tables exchanged between commands.

Rows are written sorted by key. Floats are written with their shortest round-trip repr and
read back with ``float_precision="round_trip"`` so values survive a write/read cycle exactly.

Functions:
    - write_pefile_table / read_pefile_table: ``sha256`` plus the nine PEfile columns.
    - write_feature_table / read_feature_table: ``key`` plus the icon feature columns.
    - write_assignments / read_assignments: ``key, cluster_id, outlier_flag``.
    - read_labels: ``key`` (or ``sha256``) and ``label`` as malware/benign/1/0/-1.
    - write_frame: Any frame, used for traces, CV curves, ROC points and reports.
    - write_manifest: The JSON manifest written next to command outputs.
"""
import hashlib
from pathlib import Path

import numpy as np
import pandas as pd

from src.schemas.manifest import Manifest
from src.schemas.pe import PEFILE_COLUMNS, PefileFeatureVector
from src.services.errors import BadInput, KeyMismatch

LABEL_VALUES = {"malware": 1, "benign": -1, "1": 1, "0": -1, "-1": -1, "+1": 1}


def write_frame(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def _read(path: str | Path, required: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise BadInput(f"table not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"key": str, "sha256": str})
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise BadInput(f"{path.name} lacks columns: {', '.join(missing)}")
    return frame


def write_pefile_table(rows: list[tuple[str, PefileFeatureVector]], path: str | Path) -> Path:
    records = [[key] + vector.values() for key, vector in sorted(rows, key=lambda row: row[0])]
    return write_frame(pd.DataFrame(records, columns=["sha256"] + PEFILE_COLUMNS), path)


def read_pefile_table(path: str | Path) -> pd.DataFrame:
    return _read(path, ["sha256"] + PEFILE_COLUMNS)


def write_feature_table(keys: list[str], matrix: np.ndarray, columns: list[str], path: str | Path) -> Path:
    frame = pd.DataFrame(matrix, columns=columns)
    frame.insert(0, "key", keys)
    return write_frame(frame.sort_values("key", kind="stable"), path)


def read_feature_table(path: str | Path) -> tuple[list[str], np.ndarray, list[str]]:
    """
    :return: Keys, the feature matrix and the feature column names.
    :rtype: tuple[list[str], np.ndarray, list[str]]
    :raises KeyMismatch: Duplicate keys.
    """
    frame = _read(path, ["key"]).sort_values("key", kind="stable")
    if frame["key"].duplicated().any():
        raise KeyMismatch(f"{KeyMismatch.detail}: duplicate keys in {Path(path).name}")
    columns = [column for column in frame.columns if column != "key"]
    return frame["key"].tolist(), frame[columns].to_numpy(dtype=np.float64), columns


def write_assignments(keys: list[str], ids: np.ndarray, flags: np.ndarray, path: str | Path) -> Path:
    frame = pd.DataFrame({"key": keys, "cluster_id": np.asarray(ids, dtype=np.int64),
                          "outlier_flag": np.asarray(flags, dtype=np.int64)})
    return write_frame(frame.sort_values("key", kind="stable"), path)


def read_assignments(path: str | Path) -> pd.DataFrame:
    frame = _read(path, ["key", "cluster_id", "outlier_flag"])
    frame["cluster_id"] = frame["cluster_id"].astype(np.int64)
    frame["outlier_flag"] = frame["outlier_flag"].astype(bool)
    return frame


def read_labels(path: str | Path) -> dict[str, int]:
    """
    Labels keyed by file SHA-256.

    :raises BadInput: Missing columns or an unknown label value.
    """
    frame = pd.read_csv(path, dtype=str) if Path(path).is_file() else None
    if frame is None:
        raise BadInput(f"table not found: {path}")
    key_column = "key" if "key" in frame.columns else "sha256"
    if key_column not in frame.columns or "label" not in frame.columns:
        raise BadInput(f"{Path(path).name} needs a key (or sha256) and a label column")
    labels = {}
    for key, value in zip(frame[key_column], frame["label"]):
        normalized = str(value).strip().lower()
        if normalized not in LABEL_VALUES:
            raise BadInput(f"unknown label {value!r} for {key}")
        labels[str(key)] = LABEL_VALUES[normalized]
    return labels


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Writes a manifest as indented JSON, failures sorted by name."""
    manifest = manifest.model_copy(update={"failures": sorted(manifest.failures, key=lambda f: (f.name, f.reason))})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path
