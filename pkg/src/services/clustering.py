"""
Clustering service module.

Two-stage clustering of icon feature rows: HDBSCAN finds the dense clusters, then k-means groups
the rows HDBSCAN left as outliers. New samples are assigned by a KNN vote over the training rows.

HDBSCAN steps: core distances, mutual reachability, Prim's minimum spanning tree, single linkage,
condensed tree, stabilities and excess-of-mass selection. The root of the condensed tree may be
selected, so a corpus with no split at all forms a single cluster.

Functions:
    - standardize_fit: Fits a Scaler and returns the standardized matrix.
    - core_distances / mutual_reachability / prim_mst / single_linkage / condense_tree: HDBSCAN stages.
    - hdbscan_fit: Dense cluster labels and the condensed tree.
    - kmeans_fit: k-means++ seeding and Lloyd iterations.
    - silhouette: Mean silhouette score.
    - select_outlier_k: Candidate k with the best silhouette.
    - build_cluster_model: The whole two-stage pipeline.
    - assign / assign_many: KNN assignment of new samples.
"""
from collections import Counter, deque

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist

from src.schemas.cluster import ClusterModel, ClusterParams, CondensedTree, Scaler, STD_FLOOR
from src.services.errors import DegenerateLabels, KTooLarge, ModelEmpty, ShapeMismatch, TooFewRows

KMEANS_TOL = 1e-4
KMEANS_MAX_ITER = 300


def standardize_fit(x: np.ndarray) -> tuple[Scaler, np.ndarray]:
    """
    Z-scores every column with its mean and population std, the std floored at 1e-12.
    Constant columns become exactly zero.

    :param x: Matrix with at least two rows.
    :type x: np.ndarray
    :return: The scaler and the standardized matrix.
    :rtype: tuple[Scaler, np.ndarray]
    :raises TooFewRows: Fewer than two rows.

    >>> _, z = standardize_fit(np.array([[0.0], [2.0]]))
    >>> z.ravel().tolist()
    [-1.0, 1.0]
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewRows()
    mean = x.mean(axis=0)
    constant = np.all(x == x[0], axis=0)
    mean[constant] = x[0, constant]
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    scaler = Scaler(mean=mean, std=std)
    return scaler, scaler.transform(x)


def core_distances(distances: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, the point itself counted first."""
    n = distances.shape[0]
    k = max(1, min(min_samples, n - 1))
    return np.sort(distances, axis=1)[:, k - 1]


def mutual_reachability(distances: np.ndarray, core: np.ndarray) -> np.ndarray:
    """max(core(a), core(b), d(a, b)) for every pair."""
    return np.maximum(distances, np.maximum(core[:, None], core[None, :]))


def prim_mst(graph: np.ndarray) -> np.ndarray:
    """
    Prim's algorithm on a dense symmetric weight matrix, grown from node 0.

    :return: (n - 1, 3) rows of (from, to, weight) in insertion order.
    :rtype: np.ndarray
    """
    n = graph.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = graph[0].copy()
    source = np.zeros(n, dtype=np.intp)
    edges = np.zeros((n - 1, 3))
    for step in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        node = int(np.argmin(candidates))
        edges[step] = (source[node], node, best[node])
        in_tree[node] = True
        closer = graph[node] < best
        best = np.where(closer, graph[node], best)
        source = np.where(closer, node, source)
    return edges


class _UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, node: int) -> int:
        root = node
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[node] != root:
            self.parent[node], node = root, self.parent[node]
        return root

    def union(self, a: int, b: int, new: int) -> None:
        self.parent[a] = new
        self.parent[b] = new


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """
    Dendrogram in scipy linkage format (left, right, distance, size) from MST edges.
    Edges are merged in stable ascending weight order; merge ``i`` creates node ``n + i``.
    """
    order = np.argsort(mst[:, 2], kind="stable")
    uf = _UnionFind(2 * n - 1)
    sizes = np.ones(2 * n - 1, dtype=np.intp)
    linkage = np.zeros((n - 1, 4))
    for index, edge in enumerate(order):
        a, b, weight = int(mst[edge, 0]), int(mst[edge, 1]), mst[edge, 2]
        root_a, root_b = uf.find(a), uf.find(b)
        new = n + index
        sizes[new] = sizes[root_a] + sizes[root_b]
        linkage[index] = (root_a, root_b, weight, sizes[new])
        uf.union(root_a, root_b, new)
    return linkage


def _leaves(linkage: np.ndarray, node: int, n: int) -> list[int]:
    stack, points = [node], []
    while stack:
        current = stack.pop()
        if current < n:
            points.append(current)
        else:
            row = linkage[current - n]
            stack.extend((int(row[1]), int(row[0])))
    return points


def condense_tree(linkage: np.ndarray, n: int, min_cluster_size: int) -> tuple[np.ndarray, ...]:
    """
    Collapses the dendrogram: a split producing a side smaller than ``min_cluster_size`` is
    read as points falling out of the parent. Cluster labels start at ``n`` (the root).

    :return: Arrays parent, child, lambda_val, child_size.
    :rtype: tuple[np.ndarray, ...]
    """
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rows = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        if node < n:
            continue
        left, right, distance, _ = linkage[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / distance if distance > 0.0 else np.inf
        sizes = [int(linkage[c - n][3]) if c >= n else 1 for c in (left, right)]
        parent = relabel[node]
        big = [size >= min_cluster_size for size in sizes]
        if all(big):
            for child, size in zip((left, right), sizes):
                relabel[child] = next_label
                rows.append((parent, next_label, lam, size))
                next_label += 1
                queue.append(child)
        else:
            for child, size, keep in zip((left, right), sizes, big):
                if keep:
                    relabel[child] = parent
                    queue.append(child)
                else:
                    rows.extend((parent, point, lam, 1) for point in _leaves(linkage, child, n))
    table = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return (table[:, 0].astype(np.intp), table[:, 1].astype(np.intp), table[:, 2], table[:, 3].astype(np.intp))


def _gap(lam: float, birth: float) -> float:
    return 0.0 if lam == birth else lam - birth


def hdbscan_fit(x: np.ndarray, min_cluster_size: int, min_samples: int | None = None) -> tuple[np.ndarray, CondensedTree]:
    """
    Dense cluster labels of the rows of ``x``.

    :param x: Standardized matrix.
    :type x: np.ndarray
    :param min_cluster_size: Smallest cluster in the condensed tree.
    :type min_cluster_size: int
    :param min_samples: Core-distance neighbour count, defaults to ``min_cluster_size``.
    :type min_samples: int | None
    :return: Labels 0..C-1 or -1 for outliers, and the condensed tree.
    :rtype: tuple[np.ndarray, CondensedTree]
    :raises TooFewRows: Fewer rows than ``min_cluster_size``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < max(min_cluster_size, 2):
        raise TooFewRows(f"{TooFewRows.detail}: {n} rows, min cluster size {min_cluster_size}")
    min_samples = min_samples or min_cluster_size
    distances = cdist(x, x)
    graph = mutual_reachability(distances, core_distances(distances, min_samples))
    linkage = single_linkage(prim_mst(graph), n)
    parent, child, lambda_val, child_size = condense_tree(linkage, n, min_cluster_size)

    clusters = sorted({n} | {int(c) for c, size in zip(child, child_size) if c >= n})
    birth = {n: 0.0}
    parent_of = {}
    children = {c: [] for c in clusters}
    for p, c, lam in zip(parent, child, lambda_val):
        if c >= n:
            birth[int(c)] = float(lam)
            parent_of[int(c)] = int(p)
            children[int(p)].append(int(c))
    stability = {c: 0.0 for c in clusters}
    for p, lam, size in zip(parent, lambda_val, child_size):
        stability[int(p)] += _gap(float(lam), birth[int(p)]) * int(size)

    selected = {}
    subtree = {}
    for cluster in reversed(clusters):
        below = sum(subtree[c] for c in children[cluster])
        if not children[cluster] or stability[cluster] > below:
            selected[cluster] = True
            subtree[cluster] = stability[cluster]
        else:
            selected[cluster] = False
            subtree[cluster] = below
    # Keep only the highest selected cluster on every root-to-leaf path.
    chosen = []
    queue = deque([n])
    while queue:
        cluster = queue.popleft()
        if selected[cluster]:
            chosen.append(cluster)
        else:
            queue.extend(children[cluster])
    chosen.sort()
    label_of = {cluster: index for index, cluster in enumerate(chosen)}

    labels = np.full(n, -1, dtype=np.intp)
    for p, c in zip(parent, child):
        if c >= n:
            continue
        cluster = int(p)
        while cluster not in label_of and cluster != n:
            cluster = parent_of[cluster]
        if cluster in label_of:
            labels[int(c)] = label_of[cluster]
    tree = CondensedTree(parent=parent, child=child, lambda_val=lambda_val, child_size=child_size,
                         stability=stability, selected=chosen)
    logger.debug(f"hdbscan: {len(chosen)} clusters, {int(np.sum(labels == -1))} outliers of {n}")
    return labels, tree


def _kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    nearest = cdist(x, x[centers], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = nearest.sum()
        if total > 0.0:
            pick = int(np.searchsorted(np.cumsum(nearest), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        else:
            pick = int(rng.integers(n))
        centers.append(pick)
        nearest = np.minimum(nearest, cdist(x, x[[pick]], "sqeuclidean")[:, 0])
    return x[centers].copy()


def kmeans_fit(x: np.ndarray, k: int, seed: int = 0,
               history: list[float] | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """
    k-means with k-means++ seeding from ``PCG64(seed)``. Lloyd iterations stop when no centroid
    moves by 1e-4 or more, or after 300 iterations. An empty cluster is reseeded at the point
    farthest from its own centroid.

    :param x: Data matrix.
    :type x: np.ndarray
    :param k: Number of clusters, 1 <= k <= n.
    :type k: int
    :param seed: PRNG seed.
    :type seed: int
    :param history: When given, receives the inertia after every assignment step.
    :type history: list[float] | None
    :return: Centroids, labels and inertia.
    :rtype: tuple[np.ndarray, np.ndarray, float]
    :raises KTooLarge: k outside [1, n].
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise KTooLarge(f"{KTooLarge.detail}: k={k}, n={n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _kmeans_plus_plus(x, k, rng)
    for iteration in range(KMEANS_MAX_ITER):
        squared = cdist(x, centroids, "sqeuclidean")
        labels = np.argmin(squared, axis=1)
        own = squared[np.arange(n), labels]
        if history is not None:
            history.append(float(own.sum()))
        updated = centroids.copy()
        for cluster in range(k):
            members = labels == cluster
            if members.any():
                updated[cluster] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(own))
                updated[cluster] = x[far]
                own[far] = 0.0
        shift = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        if shift < KMEANS_TOL:
            break
    squared = cdist(x, centroids, "sqeuclidean")
    labels = np.argmin(squared, axis=1)
    inertia = float(squared[np.arange(n), labels].sum())
    if history is not None:
        history.append(inertia)
    logger.debug(f"kmeans k={k}: {iteration + 1} iterations, inertia {inertia:.6g}")
    return centroids, labels, inertia


def silhouette(x: np.ndarray, labels: np.ndarray) -> float:
    """
    Mean silhouette ``(b - a) / max(a, b)``. Points in singleton clusters score 0, as does a
    point with ``max(a, b) = 0``.

    :raises DegenerateLabels: Fewer than two distinct labels.
    """
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise DegenerateLabels()
    distances = cdist(x, x)
    members = [labels == cluster for cluster in clusters]
    sizes = np.array([mask.sum() for mask in members])
    sums = np.stack([distances[:, mask].sum(axis=1) for mask in members], axis=1)
    own = np.searchsorted(clusters, labels)
    scores = np.zeros(len(labels))
    for i in range(len(labels)):
        size = sizes[own[i]]
        if size == 1:
            continue
        a = sums[i, own[i]] / (size - 1)
        others = np.delete(sums[i] / sizes, own[i])
        b = others.min()
        scale = max(a, b)
        scores[i] = 0.0 if scale == 0.0 else (b - a) / scale
    return float(scores.mean())


def select_outlier_k(x: np.ndarray, k_candidates: list[int], seed: int = 0) -> int:
    """
    The candidate k whose k-means labels score the best silhouette; ties go to the smallest k.
    A sole candidate wins without scoring.

    :raises KTooLarge: A candidate exceeds the row count.
    """
    candidates = sorted(set(k_candidates))
    if len(candidates) == 1:
        return candidates[0]
    best_k, best_score = candidates[0], -np.inf
    for k in candidates:
        if k < 2:
            continue
        _, labels, _ = kmeans_fit(x, k, seed)
        try:
            score = silhouette(x, labels)
        except DegenerateLabels:
            continue
        logger.debug(f"outlier k={k}: silhouette {score:.4f}")
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def outlier_candidates(params: ClusterParams, n_outliers: int) -> list[int]:
    if params.outlier_k_candidates:
        usable = [k for k in params.outlier_k_candidates if 1 <= k <= n_outliers]
        if usable:
            return usable
    upper = min(params.outlier_k_max, n_outliers - 1)
    return list(range(2, upper + 1)) or [1]


def build_cluster_model(x: np.ndarray, params: ClusterParams | None = None, keys: list[str] | None = None,
                        corpus_hash: str = "") -> ClusterModel:
    """
    Standardizes, runs HDBSCAN, then fits k-means on the outlier rows only.

    :param x: Feature matrix, one row per icon.
    :type x: np.ndarray
    :param params: Clustering parameters.
    :type params: ClusterParams | None
    :param keys: Row keys, stored on the model.
    :type keys: list[str] | None
    :param corpus_hash: Hash of the feature table, stored on the model.
    :type corpus_hash: str
    :return: The frozen model.
    :rtype: ClusterModel
    :raises TooFewRows: Fewer than ``min_cluster_size + 2`` rows.
    """
    params = params or ClusterParams()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < params.min_cluster_size + 2:
        raise TooFewRows(f"{TooFewRows.detail}: need at least {params.min_cluster_size + 2} rows")
    scaler, z = standardize_fit(x)
    labels, _ = hdbscan_fit(z, params.min_cluster_size, params.effective_min_samples)
    dense = int(labels.max()) + 1 if (labels >= 0).any() else 0
    outliers = np.flatnonzero(labels == -1)

    final_ids = labels.copy()
    if len(outliers) == 0:
        centroids = np.zeros((0, z.shape[1]))
        kmeans_labels = np.zeros(0, dtype=np.intp)
    else:
        k = select_outlier_k(z[outliers], outlier_candidates(params, len(outliers)), params.seed)
        centroids, kmeans_labels, _ = kmeans_fit(z[outliers], k, params.seed)
        final_ids[outliers] = dense + kmeans_labels
    logger.info(f"cluster model: {dense} dense clusters, {len(centroids)} outlier clusters, "
                f"{len(outliers)} outliers of {len(z)} rows")
    return ClusterModel(scaler=scaler, reference_matrix=z, hdbscan_labels=labels, kmeans_centroids=centroids,
                        kmeans_labels=np.asarray(kmeans_labels, dtype=np.intp), final_ids=final_ids,
                        num_dense_clusters=dense, num_outlier_clusters=len(centroids), knn_k=params.knn_k,
                        keys=list(keys or []), params=params, corpus_hash=corpus_hash)


def _vote(neighbour_labels: np.ndarray) -> int:
    counts = Counter(int(label) for label in neighbour_labels)
    top = max(counts.values())
    for label in neighbour_labels:
        if counts[int(label)] == top:
            return int(label)


def assign(model: ClusterModel, x: np.ndarray) -> tuple[int, bool]:
    """
    Assigns one feature vector to (cluster id, outlier flag).

    The ``knn_k`` nearest training rows vote with their HDBSCAN labels, outliers voting -1.
    Ties go to the label met first in distance order. A winning -1 maps to C plus the nearest
    outlier centroid.

    :param model: The cluster model.
    :type model: ClusterModel
    :param x: Raw (unstandardized) feature vector.
    :type x: np.ndarray
    :return: The final ID in [0, C + K) and whether the sample is an outlier.
    :rtype: tuple[int, bool]
    :raises ModelEmpty: The model has no reference rows.
    :raises ShapeMismatch: The vector length differs from the model's.
    """
    ids, flags = assign_many(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return int(ids[0]), bool(flags[0])


def assign_many(model: ClusterModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`assign` over a matrix."""
    reference = model.reference_matrix
    if reference.shape[0] == 0:
        raise ModelEmpty()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != reference.shape[1]:
        raise ShapeMismatch(f"{ShapeMismatch.detail}: expected {reference.shape[1]} columns")
    z = model.scaler.transform(x)
    k = min(model.knn_k, reference.shape[0])
    ids = np.zeros(len(z), dtype=np.intp)
    flags = np.zeros(len(z), dtype=bool)
    for row in range(len(z)):
        distances = cdist(z[row:row + 1], reference)[0]
        nearest = np.argsort(distances, kind="stable")[:k]
        winner = _vote(model.hdbscan_labels[nearest])
        if winner != -1:
            ids[row] = winner
            continue
        # A -1 vote implies outlier rows exist, so K >= 1.
        flags[row] = True
        squared = cdist(z[row:row + 1], model.kmeans_centroids, "sqeuclidean")[0]
        ids[row] = model.num_dense_clusters + int(np.argmin(squared))
    return ids, flags
