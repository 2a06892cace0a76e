"""
Model file repository.

Autoencoder and cluster models are stored as versioned JSON through their pydantic file
schemas. The cluster reference matrix goes to a ``reference-<sha256>.npy`` sidecar named by the
hash of its own bytes.
"""
import hashlib
import io
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src.schemas.autoencoder import AE_FORMAT_VERSION, AeLayerRecord, AeModel, AeModelFile
from src.schemas.cluster import CLUSTER_FORMAT_VERSION, ClusterModel, ClusterModelFile, Scaler
from src.services.errors import ModelFormatError

CLUSTER_MODEL_FILE = "cluster_model.json"


def save_ae_model(model: AeModel, path: str | Path) -> Path:
    """
    Writes the autoencoder as JSON, parameters flattened row-major in layer order.

    :param model: The model.
    :type model: AeModel
    :param path: Output file.
    :type path: str | Path
    :return: The written path.
    :rtype: Path
    """
    layers = [AeLayerRecord(name=name, shape=list(shape), values=model.params[name].ravel().tolist())
              for name, shape in model.architecture.weight_shapes().items()]
    document = AeModelFile(architecture=model.architecture, corpus_hash=model.corpus_hash, layers=layers)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=1), encoding="utf-8")
    return path


def load_ae_model(path: str | Path) -> AeModel:
    """
    Reads an autoencoder file and checks every layer against the architecture.

    :raises FileNotFoundError: No such file.
    :raises ModelFormatError: Wrong version, missing layer, bad shape or non-finite values.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        document = AeModelFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as err:
        raise ModelFormatError(f"{ModelFormatError.detail}: {err.errors()[0]['msg']}")
    if document.format_version != AE_FORMAT_VERSION:
        raise ModelFormatError(f"{ModelFormatError.detail}: version {document.format_version}")
    expected = document.architecture.weight_shapes()
    records = {layer.name: layer for layer in document.layers}
    if set(records) != set(expected):
        raise ModelFormatError(f"{ModelFormatError.detail}: layers {sorted(records)}")
    params = {}
    for name, shape in expected.items():
        record = records[name]
        values = np.asarray(record.values, dtype=np.float64)
        if tuple(record.shape) != shape or values.size != int(np.prod(shape)):
            raise ModelFormatError(f"{ModelFormatError.detail}: {name} has shape {record.shape}, expected {list(shape)}")
        if not np.all(np.isfinite(values)):
            raise ModelFormatError(f"{ModelFormatError.detail}: {name} holds non-finite values")
        params[name] = values.reshape(shape)
    return AeModel(architecture=document.architecture, params=params, corpus_hash=document.corpus_hash)


def _npy_bytes(matrix: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(matrix, dtype=np.float64), allow_pickle=False)
    return buffer.getvalue()


def save_cluster_model(model: ClusterModel, directory: str | Path) -> Path:
    """
    Writes ``cluster_model.json`` and its reference sidecar into ``directory``.

    :return: Path of the JSON file.
    :rtype: Path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = _npy_bytes(model.reference_matrix)
    digest = hashlib.sha256(blob).hexdigest()
    reference = f"reference-{digest}.npy"
    (directory / reference).write_bytes(blob)
    document = ClusterModelFile(
        params=model.params,
        corpus_hash=model.corpus_hash,
        keys=model.keys,
        scaler_mean=model.scaler.mean.tolist(),
        scaler_std=model.scaler.std.tolist(),
        reference_file=reference,
        reference_sha256=digest,
        reference_shape=list(model.reference_matrix.shape),
        hdbscan_labels=model.hdbscan_labels.astype(int).tolist(),
        kmeans_centroids=model.kmeans_centroids.tolist(),
        kmeans_labels=model.kmeans_labels.astype(int).tolist(),
        final_ids=model.final_ids.astype(int).tolist(),
        num_dense_clusters=model.num_dense_clusters,
        num_outlier_clusters=model.num_outlier_clusters,
        knn_k=model.knn_k,
    )
    path = directory / CLUSTER_MODEL_FILE
    path.write_text(document.model_dump_json(indent=1), encoding="utf-8")
    return path


def load_cluster_model(path: str | Path) -> ClusterModel:
    """
    Reads a cluster model from its JSON file or the directory holding it.

    :raises FileNotFoundError: The JSON file or its sidecar is missing.
    :raises ModelFormatError: Version, hash or shape mismatch.
    """
    path = Path(path)
    if path.is_dir():
        path = path / CLUSTER_MODEL_FILE
    if not path.is_file():
        raise FileNotFoundError(f"cluster model not found: {path}")
    try:
        document = ClusterModelFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as err:
        raise ModelFormatError(f"{ModelFormatError.detail}: {err.errors()[0]['msg']}")
    if document.format_version != CLUSTER_FORMAT_VERSION:
        raise ModelFormatError(f"{ModelFormatError.detail}: version {document.format_version}")
    sidecar = path.parent / document.reference_file
    if not sidecar.is_file():
        raise FileNotFoundError(f"reference matrix not found: {sidecar}")
    blob = sidecar.read_bytes()
    if hashlib.sha256(blob).hexdigest() != document.reference_sha256:
        raise ModelFormatError(f"{ModelFormatError.detail}: reference matrix hash mismatch")
    reference = np.load(io.BytesIO(blob), allow_pickle=False)
    rows, columns = document.reference_shape
    centroids = np.asarray(document.kmeans_centroids, dtype=np.float64).reshape(-1, columns)
    if (reference.shape != (rows, columns) or len(document.hdbscan_labels) != rows
            or len(document.scaler_mean) != columns or len(centroids) != document.num_outlier_clusters):
        raise ModelFormatError(f"{ModelFormatError.detail}: inconsistent cluster model shapes")
    return ClusterModel(
        scaler=Scaler(mean=np.asarray(document.scaler_mean), std=np.asarray(document.scaler_std)),
        reference_matrix=reference,
        hdbscan_labels=np.asarray(document.hdbscan_labels, dtype=np.intp),
        kmeans_centroids=centroids,
        kmeans_labels=np.asarray(document.kmeans_labels, dtype=np.intp),
        final_ids=np.asarray(document.final_ids, dtype=np.intp),
        num_dense_clusters=document.num_dense_clusters,
        num_outlier_clusters=document.num_outlier_clusters,
        knn_k=document.knn_k,
        keys=document.keys,
        params=document.params,
        corpus_hash=document.corpus_hash,
    )
