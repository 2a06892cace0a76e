"""
Classifiers service module.

Design-matrix assembly, stratified resampling, the three regularized linear models, alpha
tuning by cross-validation, and the test metrics.

Objectives are normalized by 1/n with alpha multiplying the penalty:

- logistic: mean(log(1 + exp(-y (w.x + b)))) + alpha * P(w), P the L1 or squared L2 norm;
- linear SVM: mean(max(0, 1 - y (w.x + b))) + alpha * ||w||^2.

The bias is never penalized. Labels are -1 (benign) and +1 (malware).

Functions:
    - one_hot: Indicator vector of a cluster id.
    - assemble_design: PEfile columns plus the optional one-hot icon block.
    - stratified_split / stratified_kfold: Seeded class-balanced resampling.
    - fit_logreg: Accelerated proximal gradient with backtracking.
    - fit_linear_svm: Dual coordinate pairs (SMO) with a KKT-gap stop.
    - fit_classifier: Dispatches on the configured kind.
    - tune_alpha: Cross-validated choice of alpha over a grid.
    - predict_scores / predict: Decision values and class labels.
    - roc_auc: ROC points and the exact area under the curve.
    - evaluate: Accuracy, TPR, TNR and ROC on a test set.
"""
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from scipy.special import expit

from src.schemas.classifier import (
    ClassifierConfig,
    ClassifierKind,
    ClassifierModel,
    CvPoint,
    DesignMatrix,
    EvaluationReport,
)
from src.schemas.cluster import Scaler
from src.schemas.pe import PEFILE_COLUMNS
from src.services.errors import KeyMismatch, NonFinite, OutOfRange, ShapeMismatch, SingleClass, TooFewPerClass

SVM_TAU = 1e-12
BACKTRACK_FACTOR = 2.0


def one_hot(cluster_id: int, num_ids: int) -> np.ndarray:
    """
    Indicator vector with a 1 at ``cluster_id``.

    >>> one_hot(2, 3).tolist()
    [0.0, 0.0, 1.0]
    """
    if not 0 <= cluster_id < num_ids:
        raise OutOfRange(f"{OutOfRange.detail}: {cluster_id} not in [0, {num_ids})")
    vector = np.zeros(num_ids)
    vector[cluster_id] = 1.0
    return vector


def _fit_column_scaler(x: np.ndarray) -> Scaler:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    return Scaler(mean=mean, std=std)


def assemble_design(pefile: pd.DataFrame, assignments: pd.DataFrame | None, labels: dict[str, int],
                    use_icon: bool, num_ids: int, train_index: np.ndarray | None = None,
                    use_outlier_flag: bool = False) -> DesignMatrix:
    """
    Builds the design matrix, one row per PEfile row in key order.

    The nine PEfile columns are z-scored with a scaler fitted on ``train_index`` rows only (all
    rows when omitted). With ``use_icon`` the one-hot block of the assigned cluster id follows,
    all zeros for samples without an icon, and optionally the outlier flag column.

    :param pefile: Columns ``sha256`` and the nine PEfile features.
    :type pefile: pd.DataFrame
    :param assignments: Columns ``key``, ``cluster_id``, ``outlier_flag``.
    :type assignments: pd.DataFrame | None
    :param labels: Key to label in {-1, +1}.
    :type labels: dict[str, int]
    :param use_icon: Append the icon block.
    :type use_icon: bool
    :param num_ids: Width of the one-hot block, C + K.
    :type num_ids: int
    :param train_index: Row positions the scaler is fitted on.
    :type train_index: np.ndarray | None
    :param use_outlier_flag: Append ``icon_outlier`` after the one-hot block.
    :type use_outlier_flag: bool
    :return: The design matrix.
    :rtype: DesignMatrix
    :raises KeyMismatch: Duplicate keys, or a PEfile row without a label.
    :raises OutOfRange: An assigned cluster id outside [0, num_ids).
    """
    frame = pefile.sort_values("sha256", kind="stable")
    keys = frame["sha256"].astype(str).tolist()
    if len(set(keys)) != len(keys):
        raise KeyMismatch(f"{KeyMismatch.detail}: duplicate PEfile keys")
    missing = [key for key in keys if key not in labels]
    if missing:
        raise KeyMismatch(f"{KeyMismatch.detail}: {len(missing)} rows have no label, e.g. {missing[0]}")
    y = np.array([labels[key] for key in keys], dtype=np.float64)

    continuous = frame[PEFILE_COLUMNS].to_numpy(dtype=np.float64)
    rows = np.arange(len(keys)) if train_index is None else np.asarray(train_index)
    scaler = _fit_column_scaler(continuous[rows])
    blocks = [scaler.transform(continuous)]
    columns = list(PEFILE_COLUMNS)

    if use_icon:
        lookup = {}
        if assignments is not None:
            if assignments["key"].duplicated().any():
                raise KeyMismatch(f"{KeyMismatch.detail}: duplicate assignment keys")
            for key, cluster_id, flag in assignments[["key", "cluster_id", "outlier_flag"]].itertuples(index=False):
                lookup[str(key)] = (int(cluster_id), bool(flag))
        icon_block = np.zeros((len(keys), num_ids))
        flag_column = np.zeros((len(keys), 1))
        for row, key in enumerate(keys):
            if key in lookup:
                cluster_id, flag = lookup[key]
                icon_block[row] = one_hot(cluster_id, num_ids)
                flag_column[row, 0] = float(flag)
        blocks.append(icon_block)
        columns += [f"cluster_{index:03d}" for index in range(num_ids)]
        if use_outlier_flag:
            blocks.append(flag_column)
            columns.append("icon_outlier")
    return DesignMatrix(x=np.hstack(blocks), y=y, columns=columns, keys=keys, scaler=scaler)


def _classes(y: np.ndarray) -> np.ndarray:
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClass()
    return classes


def stratified_split(y: np.ndarray, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-class seeded shuffle; each class sends ``floor(count * fraction + 0.5)`` rows to the test set.

    :return: Sorted train and test row positions.
    :rtype: tuple[np.ndarray, np.ndarray]
    :raises SingleClass: Only one class present.
    """
    y = np.asarray(y)
    rng = np.random.Generator(np.random.PCG64(seed))
    train, test = [], []
    for label in _classes(y):
        members = rng.permutation(np.flatnonzero(y == label))
        n_test = int(np.floor(len(members) * test_fraction + 0.5))
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.sort(np.array(train, dtype=np.intp)), np.sort(np.array(test, dtype=np.intp))


def stratified_kfold(y: np.ndarray, k: int, seed: int = 0) -> list[np.ndarray]:
    """
    Deals every class round-robin over ``k`` folds after a seeded shuffle. The dealing position
    carries over from one class to the next so fold sizes stay within one of each other.

    :return: k sorted, disjoint arrays covering every row.
    :rtype: list[np.ndarray]
    :raises TooFewPerClass: A class has fewer than k members.
    """
    y = np.asarray(y)
    classes = _classes(y)
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = [[] for _ in range(k)]
    offset = 0
    for label in classes:
        members = rng.permutation(np.flatnonzero(y == label))
        if len(members) < k:
            raise TooFewPerClass(f"{TooFewPerClass.detail}: class {label} has {len(members)} < {k}")
        for position, index in enumerate(members):
            folds[(offset + position) % k].append(index)
        offset = (offset + len(members)) % k
    return [np.sort(np.array(fold, dtype=np.intp)) for fold in folds]


def _check_finite(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFinite()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"{ShapeMismatch.detail}: X {x.shape}, y {y.shape}")
    return x, y


def _penalty(w: np.ndarray, kind: ClassifierKind, alpha: float) -> float:
    if kind == ClassifierKind.logreg_l1:
        return alpha * float(np.abs(w).sum())
    return alpha * float(w @ w)


def _prox(w: np.ndarray, kind: ClassifierKind, threshold: float) -> np.ndarray:
    """Proximal map of ``threshold * P``."""
    if kind == ClassifierKind.logreg_l1:
        return np.sign(w) * np.maximum(np.abs(w) - threshold, 0.0)
    return w / (1.0 + 2.0 * threshold)


def logistic_loss(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    return float(np.mean(np.logaddexp(0.0, -y * (x @ w + b))))


def hinge_loss(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    return float(np.mean(np.maximum(0.0, 1.0 - y * (x @ w + b))))


def objective(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> float:
    """Training objective of a fitted model on (x, y)."""
    loss = hinge_loss if model.config.kind == ClassifierKind.linear_svm else logistic_loss
    return loss(x, y, model.weights, model.bias) + _penalty(model.weights, model.config.kind, model.config.alpha)


def _logistic_smooth(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> tuple[float, np.ndarray, float]:
    margins = y * (x @ w + b)
    coefficient = -y * expit(-margins) / len(y)
    return float(np.mean(np.logaddexp(0.0, -margins))), x.T @ coefficient, float(coefficient.sum())


def fit_logreg(x: np.ndarray, y: np.ndarray, penalty: str, alpha: float,
               config: ClassifierConfig | None = None) -> ClassifierModel:
    """
    Penalized logistic regression by accelerated proximal gradient (FISTA) with backtracking.

    The step constant starts at 1 and doubles until the quadratic upper bound holds. A
    momentum step that raises the objective is discarded and momentum restarts from the last
    accepted point. The solver stops when an accepted step lowers the objective by less than
    ``tol`` relative to its previous value.

    :param x: (n, p) design matrix.
    :type x: np.ndarray
    :param y: Labels in {-1, +1}.
    :type y: np.ndarray
    :param penalty: ``"l1"`` or ``"l2"``.
    :type penalty: str
    :param alpha: Regularization strength.
    :type alpha: float
    :param config: Tolerance and iteration cap.
    :type config: ClassifierConfig | None
    :return: The fitted model, ``converged`` False when the cap was reached.
    :rtype: ClassifierModel
    :raises NonFinite: Non-finite inputs.
    """
    x, y = _check_finite(x, y)
    kind = ClassifierKind.logreg_l1 if penalty == "l1" else ClassifierKind.logreg_l2
    config = (config or ClassifierConfig()).model_copy(update={"kind": kind, "alpha": alpha})

    w, b = np.zeros(x.shape[1]), 0.0
    smooth, _, _ = _logistic_smooth(x, y, w, b)
    current = smooth + _penalty(w, kind, alpha)
    trace = [current]
    yw, yb = w.copy(), b
    w_prev, b_prev = w.copy(), b
    t = 1.0
    lipschitz = 1.0
    converged = False
    restarted = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        f_y, grad_w, grad_b = _logistic_smooth(x, y, yw, yb)
        while True:
            step = 1.0 / lipschitz
            zw = _prox(yw - step * grad_w, kind, step * alpha)
            zb = yb - step * grad_b
            f_z, _, _ = _logistic_smooth(x, y, zw, zb)
            dw, db = zw - yw, zb - yb
            bound = f_y + grad_w @ dw + grad_b * db + 0.5 * lipschitz * (dw @ dw + db * db)
            if f_z <= bound + 1e-15 * max(1.0, abs(f_y)):
                break
            lipschitz *= BACKTRACK_FACTOR
        candidate = f_z + _penalty(zw, kind, alpha)
        if candidate > current:
            if restarted:
                # A plain proximal step from the accepted point cannot improve it.
                converged = True
                break
            t = 1.0
            yw, yb = w.copy(), b
            restarted = True
            continue
        restarted = False
        w_prev, b_prev = w, b
        w, b = zw, zb
        decrease = current - candidate
        previous = current
        current = candidate
        trace.append(current)
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum = (t - 1.0) / t_next
        yw, yb = w + momentum * (w - w_prev), b + momentum * (b - b_prev)
        t = t_next
        if decrease <= config.tol * max(abs(previous), 1e-300):
            converged = True
            break
    if not converged:
        logger.warning(f"{kind.value} alpha={alpha:.3g} did not converge in {config.max_iter} iterations")
    return ClassifierModel(weights=w, bias=float(b), config=config, converged=converged, objective=current,
                           iterations=iteration, trace=trace)


def _svm_bounds(a: np.ndarray, y: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Index sets whose dual variable may move up (``up``) or down (``low``) along y."""
    up = ((y > 0) & (a < c)) | ((y < 0) & (a > 0))
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < c))
    return up, low


def _svm_working_pair(a: np.ndarray, grad: np.ndarray, y: np.ndarray, c: float, gram: np.ndarray,
                      diag: np.ndarray, tol: float) -> tuple[int, int, float] | None:
    """Most violating i and the second-order choice of j, or None once the KKT gap is within ``tol``."""
    score = -y * grad
    up, low = _svm_bounds(a, y, c)
    if not up.any() or not low.any():
        return None
    i = int(np.argmax(np.where(up, score, -np.inf)))
    top = score[i]
    if top - score[low].min() <= tol:
        return None
    gain = top - score
    curvature = np.maximum(diag[i] + diag - 2.0 * gram[i], SVM_TAU)
    j = int(np.argmax(np.where(low & (gain > 0.0), gain * gain / curvature, -np.inf)))
    return i, j, float(gain[j] / curvature[j])


def _svm_bias(a: np.ndarray, grad: np.ndarray, y: np.ndarray, c: float) -> float:
    score = -y * grad
    free = (a > 0.0) & (a < c)
    if free.any():
        return float(score[free].mean())
    up, low = _svm_bounds(a, y, c)
    lower = score[up].max() if up.any() else None
    upper = score[low].min() if low.any() else None
    if lower is None or upper is None:
        return float(lower if upper is None else upper)
    return float((lower + upper) / 2.0)


def fit_linear_svm(x: np.ndarray, y: np.ndarray, alpha: float,
                   config: ClassifierConfig | None = None) -> ClassifierModel:
    """
    Linear SVM solved in the dual by sequential minimal optimization.

    Dividing the objective by ``2 alpha`` gives the standard ``||w||^2 / 2 + C sum(hinge)`` form with
    ``C = 1 / (2 alpha n)``; its dual is box-constrained with the single equality ``sum(y a) = 0``
    that comes from the unpenalized bias. Each update moves the most KKT-violating index together
    with the partner of largest second-order gain. The solver stops once the KKT gap falls to
    ``sqrt(tol)``. One iteration is a sweep of at most ``n`` pair updates; after every sweep the
    primal objective is evaluated and the best primal point so far is kept.

    :param x: (n, p) design matrix.
    :type x: np.ndarray
    :param y: Labels in {-1, +1}.
    :type y: np.ndarray
    :param alpha: Regularization strength.
    :type alpha: float
    :param config: Tolerance and sweep cap.
    :type config: ClassifierConfig | None
    :return: The fitted model; ``trace`` holds the best objective after every sweep.
    :rtype: ClassifierModel
    :raises NonFinite: Non-finite inputs.
    """
    x, y = _check_finite(x, y)
    kind = ClassifierKind.linear_svm
    config = (config or ClassifierConfig()).model_copy(update={"kind": kind, "alpha": alpha})
    n = len(y)
    c = 1.0 / (2.0 * alpha * n)
    gap_tol = float(np.sqrt(config.tol))
    gram = x @ x.T
    diag = np.diag(gram).copy()
    signed = y[:, None] * y[None, :] * gram

    a = np.zeros(n)
    grad = -np.ones(n)
    w = np.zeros(x.shape[1])
    best_w, best_b = w.copy(), 0.0
    best = hinge_loss(x, y, w, 0.0) + _penalty(w, kind, alpha)
    trace = [best]
    converged = False
    sweep = 0
    for sweep in range(1, config.max_iter + 1):
        for _ in range(n):
            pair = _svm_working_pair(a, grad, y, c, gram, diag, gap_tol)
            if pair is None:
                converged = True
                break
            i, j, step = pair
            room_i = c - a[i] if y[i] > 0 else a[i]
            room_j = a[j] if y[j] > 0 else c - a[j]
            step = min(step, room_i, room_j)
            old_i, old_j = a[i], a[j]
            a[i] = (c if y[i] > 0 else 0.0) if step == room_i else a[i] + y[i] * step
            a[j] = (0.0 if y[j] > 0 else c) if step == room_j else a[j] - y[j] * step
            delta_i, delta_j = a[i] - old_i, a[j] - old_j
            w += y[i] * delta_i * x[i] + y[j] * delta_j * x[j]
            grad += delta_i * signed[:, i] + delta_j * signed[:, j]
        b = _svm_bias(a, grad, y, c)
        value = hinge_loss(x, y, w, b) + _penalty(w, kind, alpha)
        if value < best:
            best, best_w, best_b = value, w.copy(), b
        trace.append(best)
        if converged:
            break
    if not converged:
        logger.warning(f"linear_svm alpha={alpha:.3g} did not converge in {config.max_iter} sweeps")
    return ClassifierModel(weights=best_w, bias=float(best_b), config=config, converged=converged,
                           objective=best, iterations=sweep, trace=trace)


def fit_classifier(x: np.ndarray, y: np.ndarray, config: ClassifierConfig) -> ClassifierModel:
    if config.kind == ClassifierKind.linear_svm:
        return fit_linear_svm(x, y, config.alpha, config)
    penalty = "l1" if config.kind == ClassifierKind.logreg_l1 else "l2"
    return fit_logreg(x, y, penalty, config.alpha, config)


def predict_scores(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """
    Decision values ``w.x + b``.

    :raises ShapeMismatch: Column count differs from the weight count.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.weights):
        raise ShapeMismatch(f"{ShapeMismatch.detail}: expected {len(model.weights)} columns")
    return x @ model.weights + model.bias


def predict(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """+1 where the score is positive, -1 elsewhere."""
    return np.where(predict_scores(model, x) > 0.0, 1.0, -1.0)


def _rates(predicted: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    positive, negative = y > 0, y < 0
    accuracy = float(np.mean(predicted == y))
    tpr = float(np.mean(predicted[positive] == 1.0)) if positive.any() else 0.0
    tnr = float(np.mean(predicted[negative] == -1.0)) if negative.any() else 0.0
    return accuracy, tpr, tnr


def _cv_point(config: ClassifierConfig, x: np.ndarray, y: np.ndarray, folds: list[np.ndarray]) -> CvPoint:
    stats = []
    every = np.arange(len(y))
    for fold in folds:
        train = np.setdiff1d(every, fold, assume_unique=True)
        model = fit_classifier(x[train], y[train], config)
        stats.append(_rates(predict(model, x[fold]), y[fold]))
    stats = np.array(stats)
    means, stds = stats.mean(axis=0), stats.std(axis=0)
    return CvPoint(alpha=config.alpha, cv_accuracy=means[0], cv_accuracy_std=stds[0], cv_tpr=means[1],
                   cv_tpr_std=stds[1], cv_tnr=means[2], cv_tnr_std=stds[2])


def tune_alpha(kind: ClassifierKind, x: np.ndarray, y: np.ndarray, alpha_grid: list[float], k: int, seed: int = 0,
               config: ClassifierConfig | None = None, jobs: int = 1) -> tuple[float, list[CvPoint]]:
    """
    Stratified k-fold cross-validation at every grid point.

    :param kind: Model kind.
    :type kind: ClassifierKind
    :param x: Training design matrix.
    :type x: np.ndarray
    :param y: Training labels.
    :type y: np.ndarray
    :param alpha_grid: Candidate strengths, non-empty.
    :type alpha_grid: list[float]
    :param k: Number of folds.
    :type k: int
    :param seed: Fold assignment seed.
    :type seed: int
    :param config: Solver settings shared by every fit.
    :type config: ClassifierConfig | None
    :param jobs: Worker processes across grid points.
    :type jobs: int
    :return: The alpha with the best mean accuracy, ties to the larger alpha, and the CV curve in grid order.
    :rtype: tuple[float, list[CvPoint]]
    """
    if not alpha_grid:
        raise ValueError("alpha grid must not be empty")
    base = config or ClassifierConfig()
    folds = stratified_kfold(y, k, seed)
    configs = [base.model_copy(update={"kind": kind, "alpha": float(alpha)}) for alpha in alpha_grid]
    curve = Parallel(n_jobs=jobs)(delayed(_cv_point)(cfg, x, y, folds) for cfg in configs)
    best = curve[0]
    for point in curve[1:]:
        if point.cv_accuracy > best.cv_accuracy or (point.cv_accuracy == best.cv_accuracy and point.alpha > best.alpha):
            best = point
    logger.info(f"{kind.value}: best alpha {best.alpha:.3g}, cv accuracy {best.cv_accuracy:.4f}")
    return best.alpha, curve


def roc_auc(scores: np.ndarray, y: np.ndarray) -> tuple[list[tuple[float, float]], float]:
    """
    ROC points swept over the distinct scores in descending order, tied scores forming one step,
    and the trapezoid area. The area is computed from integer counts so it equals the pair
    statistic (positives above negatives, ties counted half) exactly.

    :return: (FPR, TPR) points from (0, 0) to (1, 1), and the AUC.
    :rtype: tuple[list[tuple[float, float]], float]
    :raises SingleClass: Only one class present.

    >>> roc_auc(np.array([0.9, 0.1]), np.array([1, -1]))[1]
    1.0
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    positives = int(np.sum(y > 0))
    negatives = int(np.sum(y <= 0))
    if positives == 0 or negatives == 0:
        raise SingleClass()
    order = np.argsort(-scores, kind="stable")
    sorted_scores, sorted_pos = scores[order], y[order] > 0
    points = [(0.0, 0.0)]
    tp = fp = 0
    numerator = 0
    start = 0
    while start < len(sorted_scores):
        end = start
        while end < len(sorted_scores) and sorted_scores[end] == sorted_scores[start]:
            end += 1
        group_tp = int(sorted_pos[start:end].sum())
        group_fp = (end - start) - group_tp
        numerator += group_fp * (2 * tp + group_tp)
        tp += group_tp
        fp += group_fp
        points.append((fp / negatives, tp / positives))
        start = end
    return points, numerator / (2 * positives * negatives)


def evaluate(model: ClassifierModel, x_test: np.ndarray, y_test: np.ndarray) -> EvaluationReport:
    """
    Accuracy, malware recall (TPR), benign recall (TNR) and ROC of a model on a test set.

    :raises SingleClass: The test set lacks a class.
    """
    y_test = np.asarray(y_test, dtype=np.float64)
    _classes(y_test)
    scores = predict_scores(model, x_test)
    accuracy, tpr, tnr = _rates(np.where(scores > 0.0, 1.0, -1.0), y_test)
    points, auc = roc_auc(scores, y_test)
    return EvaluationReport(accuracy=accuracy, tpr=tpr, tnr=tnr, auc=auc, roc=points)
