"""
Schemas module.

This module contains Pydantic models for the two-stage icon clustering.

Models:
    - Scaler: Per-column mean and floored standard deviation.
    - CondensedTree: The condensed HDBSCAN hierarchy with cluster stabilities.
    - ClusterParams: Clustering parameters.
    - ClusterModel: Frozen artifacts of a clustering run.
    - ClusterModelFile: The versioned JSON form of a ClusterModel.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

CLUSTER_FORMAT_VERSION = 1
STD_FLOOR = 1e-12


class Scaler(BaseModel):
    """
    Schema for column standardization.

    Attributes:
        mean (np.ndarray): Column means.
        std (np.ndarray): Population standard deviations floored at 1e-12.
    """
    mean: np.ndarray
    std: np.ndarray
    model_config = ConfigDict(arbitrary_types_allowed=True)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


class CondensedTree(BaseModel):
    """
    Schema for the condensed tree.

    Attributes:
        parent (np.ndarray): Parent cluster label of each entry, labels start at n.
        child (np.ndarray): Child point (below n) or cluster label.
        lambda_val (np.ndarray): 1 / distance at which the child leaves the parent.
        child_size (np.ndarray): Number of points under the child.
        stability (dict[int, float]): Stability of every cluster label.
        selected (list[int]): Cluster labels chosen by excess of mass, ascending.
    """
    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    stability: dict[int, float]
    selected: list[int]
    model_config = ConfigDict(arbitrary_types_allowed=True)


class ClusterParams(BaseModel):
    """Schema for clustering parameters."""
    min_cluster_size: int = Field(15, ge=2)
    min_samples: int | None = Field(None, ge=1)
    knn_k: int = Field(5, ge=1)
    outlier_k_max: int = Field(50, ge=1)
    outlier_k_candidates: list[int] | None = None
    seed: int = 0

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


class ClusterModel(BaseModel):
    """
    Schema for a built cluster model.

    Attributes:
        scaler (Scaler): Standardization fitted on the training matrix.
        reference_matrix (np.ndarray): The standardized training matrix.
        hdbscan_labels (np.ndarray): Per-row dense label, -1 for outliers.
        kmeans_centroids (np.ndarray): (K, p) centroids fitted on the outlier rows only.
        kmeans_labels (np.ndarray): k-means label of each outlier row, in row order.
        final_ids (np.ndarray): Per-row ID, dense label or C + k-means label.
        num_dense_clusters (int): C.
        num_outlier_clusters (int): K.
        knn_k (int): Neighbours voting in assign.
        keys (list[str]): Row keys of the training matrix.
        params (ClusterParams): Parameters used to build the model.
        corpus_hash (str): Hash of the training matrix.
    """
    scaler: Scaler
    reference_matrix: np.ndarray
    hdbscan_labels: np.ndarray
    kmeans_centroids: np.ndarray
    kmeans_labels: np.ndarray
    final_ids: np.ndarray
    num_dense_clusters: int
    num_outlier_clusters: int
    knn_k: int
    keys: list[str] = Field(default_factory=list)
    params: ClusterParams = Field(default_factory=ClusterParams)
    corpus_hash: str = ""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def num_ids(self) -> int:
        return self.num_dense_clusters + self.num_outlier_clusters

    @property
    def outlier_flags(self) -> np.ndarray:
        return self.hdbscan_labels == -1


class ClusterModelFile(BaseModel):
    """Schema of the persisted cluster model; the reference matrix lives in a .npy sidecar."""
    format_version: int = CLUSTER_FORMAT_VERSION
    params: ClusterParams
    corpus_hash: str = ""
    keys: list[str]
    scaler_mean: list[float]
    scaler_std: list[float]
    reference_file: str
    reference_sha256: str
    reference_shape: list[int]
    hdbscan_labels: list[int]
    kmeans_centroids: list[list[float]]
    kmeans_labels: list[int]
    final_ids: list[int]
    num_dense_clusters: int
    num_outlier_clusters: int
    knn_k: int
