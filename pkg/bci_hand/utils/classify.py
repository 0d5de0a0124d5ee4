# Mahalanobis LOO clustering, MLP classifier and SSA
# bci_hand/utils/classify.py
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import chi2

from bci_hand.core.errors import (DimensionMismatch, EmptyClass, InsufficientTrials, MissingClass,
                                  SingularCovariance, TrainingDiverged)
from bci_hand.models.recording import ClassStats, FeatureMatrix, MlpModel
from bci_hand.models.schemas import ClassLabel, ConfusionCounts, SelectionResult
from bci_hand.utils.features import select_top_k

logger = logging.getLogger(__name__)


# Distances and accuracy
def mahalanobis_sq(x: np.ndarray, stats: ClassStats) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != stats.mean.shape:
        raise DimensionMismatch(f"vector has shape {x.shape}, class mean {stats.mean.shape}")
    d = x - stats.mean
    return float(d @ stats.cov_inv @ d)


def ssa(confusion: ConfusionCounts) -> float:
    """Mean of sensitivity (wrist) and specificity (finger)"""
    if confusion.n_wrist == 0 or confusion.n_finger == 0:
        raise EmptyClass("SSA needs at least one trial of each class")
    return 0.5 * (confusion.t_w / confusion.n_wrist + confusion.t_f / confusion.n_finger)


def confusion_counts(true: Sequence[ClassLabel], predicted: Sequence[ClassLabel]) -> ConfusionCounts:
    counts = ConfusionCounts()
    for t, p in zip(true, predicted):
        if t is ClassLabel.WRIST:
            if p is ClassLabel.WRIST:
                counts.t_w += 1
            else:
                counts.f_w += 1
        elif p is ClassLabel.FINGER:
            counts.t_f += 1
        else:
            counts.f_f += 1
    return counts


def _wrist_mask(labels: Sequence[ClassLabel]) -> np.ndarray:
    mask = np.array([lab is ClassLabel.WRIST for lab in labels], dtype=bool)
    if not mask.any():
        raise MissingClass("no Wrist trials")
    if mask.all():
        raise MissingClass("no Finger trials")
    return mask


def _shrunk_stats(mean: np.ndarray, cov: np.ndarray, n: int, shrinkage: float) -> ClassStats:
    d = mean.size
    if n < 2:
        raise SingularCovariance(f"{n} trial(s) cannot define a covariance")
    if shrinkage == 0 and n - 1 < d:
        raise SingularCovariance(f"{n} trials cannot give a full-rank {d}x{d} covariance without shrinkage")
    reg = (1.0 - shrinkage) * cov + shrinkage * np.trace(cov) / d * np.eye(d)
    if np.linalg.matrix_rank(reg) < d:
        raise SingularCovariance("class covariance is singular")
    inv = np.linalg.inv(reg)
    return ClassStats(mean=mean, cov=cov, cov_inv=0.5 * (inv + inv.T), n=n)


def class_stats(values: np.ndarray, shrinkage: float = 0.1) -> ClassStats:
    """Mean and shrunk covariance C <- (1 - l) C + l trace(C)/d I, with its inverse"""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise SingularCovariance(f"{n} trial(s) cannot define a covariance")
    cov = np.atleast_2d(np.cov(values, rowvar=False, ddof=1))
    return _shrunk_stats(values.mean(axis=0), cov, n, shrinkage)


def _md_predict(x: np.ndarray, wrist: ClassStats, finger: ClassStats) -> ClassLabel:
    # Exact ties go to Wrist
    if mahalanobis_sq(x, wrist) <= mahalanobis_sq(x, finger):
        return ClassLabel.WRIST
    return ClassLabel.FINGER


def md_loo_classify(matrix: FeatureMatrix,
                    shrinkage: float = 0.1) -> Tuple[List[ClassLabel], ConfusionCounts]:
    """Leave-one-out nearest-class-mean by Mahalanobis distance.

    The tested trial is removed from both class means and covariances before it is
    classified.
    """
    wrist = _wrist_mask(matrix.labels)
    X = matrix.values
    predictions = []
    for i in range(X.shape[0]):
        keep = np.ones(X.shape[0], dtype=bool)
        keep[i] = False
        predictions.append(_md_predict(X[i],
                                       class_stats(X[keep & wrist], shrinkage),
                                       class_stats(X[keep & ~wrist], shrinkage)))
    return predictions, confusion_counts(matrix.labels, predictions)


def md_loo_incremental(matrix: FeatureMatrix,
                       shrinkage: float = 0.1) -> Tuple[List[ClassLabel], ConfusionCounts]:
    """md_loo_classify computed by downdating per-class sums instead of re-scanning trials.

    Only the tested trial's own class changes; the other class keeps its full-data stats.
    """
    wrist = _wrist_mask(matrix.labels)
    X = matrix.values
    full = {True: class_stats(X[wrist], shrinkage), False: class_stats(X[~wrist], shrinkage)}
    sums = {flag: (X[wrist == flag].sum(axis=0), X[wrist == flag].T @ X[wrist == flag],
                   int((wrist == flag).sum())) for flag in (True, False)}
    predictions = []
    for i in range(X.shape[0]):
        own = bool(wrist[i])
        total, outer, n = sums[own]
        n_left = n - 1
        if n_left < 2:
            raise SingularCovariance(f"{n_left} trial(s) left in the class after removal")
        mean = (total - X[i]) / n_left
        cov = (outer - np.outer(X[i], X[i]) - n_left * np.outer(mean, mean)) / (n_left - 1)
        reduced = _shrunk_stats(mean, np.atleast_2d(cov), n_left, shrinkage)
        w, f = (reduced, full[False]) if own else (full[True], reduced)
        predictions.append(_md_predict(X[i], w, f))
    return predictions, confusion_counts(matrix.labels, predictions)


def md_loo_nested(matrix: FeatureMatrix, k: int = 18,
                  shrinkage: float = 0.1) -> Tuple[List[ClassLabel], ConfusionCounts]:
    """md_loo_classify with the Bhattacharyya selection re-run inside every fold"""
    wrist = _wrist_mask(matrix.labels)
    X = matrix.values
    predictions = []
    for i in range(X.shape[0]):
        rows = [r for r in range(X.shape[0]) if r != i]
        columns = select_top_k(matrix.take_rows(rows), k).selected_columns
        keep = np.ones(X.shape[0], dtype=bool)
        keep[i] = False
        Xc = X[:, columns]
        predictions.append(_md_predict(Xc[i],
                                       class_stats(Xc[keep & wrist], shrinkage),
                                       class_stats(Xc[keep & ~wrist], shrinkage)))
    return predictions, confusion_counts(matrix.labels, predictions)


def md_outlier_filter(matrix: FeatureMatrix, shrinkage: float = 0.1,
                      quantile: float = 0.999) -> Tuple[FeatureMatrix, List[int]]:
    """Drop trials whose MD^2 to their own class exceeds the chi-square(d) quantile"""
    wrist = _wrist_mask(matrix.labels)
    X = matrix.values
    limit = chi2.ppf(quantile, X.shape[1])
    stats = {True: class_stats(X[wrist], shrinkage), False: class_stats(X[~wrist], shrinkage)}
    dropped = [i for i in range(X.shape[0]) if mahalanobis_sq(X[i], stats[bool(wrist[i])]) > limit]
    if dropped:
        logger.info(f"MD outlier filter dropped {len(dropped)} trials (limit {limit:.1f})")
    kept = [i for i in range(X.shape[0]) if i not in set(dropped)]
    return matrix.take_rows(kept), dropped


# Multilayer perceptron
@dataclass
class MlpParams:
    hidden: int = 24
    lr: float = 0.05
    epochs: int = 2000
    patience: int = 50
    min_delta: float = 1e-7
    train_ratio: float = 0.7
    seed: int = 0

    @classmethod
    def from_config(cls, cfg, seed: int) -> "MlpParams":
        return cls(hidden=cfg.hidden, lr=cfg.lr, epochs=cfg.epochs, patience=cfg.patience,
                   min_delta=cfg.min_delta, train_ratio=cfg.train_ratio, seed=seed)


def init_mlp(n_inputs: int, hidden: int, seed: int) -> MlpModel:
    rng = np.random.default_rng(seed)
    return MlpModel(w1=rng.normal(0.0, 1.0 / np.sqrt(n_inputs), (n_inputs, hidden)),
                    b1=np.zeros(hidden),
                    w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, 1)),
                    b2=np.zeros(1),
                    seed=seed)


def mlp_forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Logistic output in (0, 1), one value per row"""
    hidden = np.tanh(X @ model.w1 + model.b1)
    return expit(hidden @ model.w2 + model.b2).ravel()


def mlp_loss_and_grad(model: MlpModel, X: np.ndarray,
                      y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean binary cross-entropy and its gradient with respect to every parameter"""
    n = X.shape[0]
    hidden = np.tanh(X @ model.w1 + model.b1)
    z = (hidden @ model.w2 + model.b2).ravel()
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (expit(z) - y) / n
    dh = np.outer(dz, model.w2.ravel()) * (1.0 - hidden ** 2)
    grads = {"w1": X.T @ dh, "b1": dh.sum(axis=0),
             "w2": hidden.T @ dz[:, None], "b2": np.array([dz.sum()])}
    return loss, grads


PARAM_NAMES = ("w1", "b1", "w2", "b2")


def pack_params(model: MlpModel) -> np.ndarray:
    return np.concatenate([getattr(model, name).ravel() for name in PARAM_NAMES])


def unpack_params(model: MlpModel, vector: np.ndarray) -> MlpModel:
    out, offset = {}, 0
    for name in PARAM_NAMES:
        shape = getattr(model, name).shape
        size = int(np.prod(shape))
        out[name] = vector[offset:offset + size].reshape(shape).copy()
        offset += size
    return MlpModel(seed=model.seed, **out)


def _standardize(X: np.ndarray, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return (X - mean) / scale


def train_mlp(X: np.ndarray, y: np.ndarray, params: MlpParams) -> MlpModel:
    """Full-batch gradient descent with a plateau stop on the training loss"""
    model = init_mlp(X.shape[1], params.hidden, params.seed)
    log = model.training_log
    for epoch in range(params.epochs):
        loss, grads = mlp_loss_and_grad(model, X, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        log.append(loss)
        for name in PARAM_NAMES:
            setattr(model, name, getattr(model, name) - params.lr * grads[name])
        if epoch >= params.patience and log[epoch - params.patience] - loss < params.min_delta:
            logger.debug(f"MLP loss plateaued at epoch {epoch}")
            break
    return model


def stratified_split(labels: Sequence[ClassLabel], train_ratio: float,
                     seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded per-class shuffle; round-half-up share of each class goes to training"""
    rng = np.random.default_rng(seed)
    labels = list(labels)
    train, test = [], []
    for label in (ClassLabel.WRIST, ClassLabel.FINGER):
        idx = np.array([i for i, lab in enumerate(labels) if lab is label], dtype=int)
        idx = idx[rng.permutation(idx.size)]
        n_train = int(math.floor(train_ratio * idx.size + 0.5))
        train.extend(idx[:n_train].tolist())
        test.extend(idx[n_train:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


def mlp_train(matrix: FeatureMatrix, params: MlpParams,
              split: Optional[Tuple[np.ndarray, np.ndarray]] = None
              ) -> Tuple[MlpModel, List[Tuple[int, ClassLabel]], ConfusionCounts]:
    """Train on the 7:3 stratified split and return the test-set confusion (Wrist = 1)"""
    wrist = _wrist_mask(matrix.labels)
    if wrist.sum() < 10 or (~wrist).sum() < 10:
        raise InsufficientTrials("the MLP protocol needs at least 10 trials per class")
    train_idx, test_idx = split if split is not None else stratified_split(
        matrix.labels, params.train_ratio, params.seed)

    X = matrix.values
    y = wrist.astype(float)
    mean = X[train_idx].mean(axis=0)
    scale = X[train_idx].std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)

    model = train_mlp(_standardize(X[train_idx], mean, scale), y[train_idx], params)
    model.feature_mean, model.feature_scale = mean, scale
    outputs = mlp_forward(model, _standardize(X[test_idx], mean, scale))
    predicted = [ClassLabel.WRIST if p >= 0.5 else ClassLabel.FINGER for p in outputs]
    confusion = confusion_counts([matrix.labels[i] for i in test_idx], predicted)
    return model, list(zip(test_idx.tolist(), predicted)), confusion


def sweep_hidden_nodes(matrix: FeatureMatrix, candidates: Sequence[int], params: MlpParams,
                       seeds: Sequence[int]) -> Tuple[int, Dict[int, float]]:
    """Hidden-layer size with the lowest mean test error (1 - SSA) over the seeds"""
    errors: Dict[int, float] = {}
    for hidden in candidates:
        runs = []
        for seed in seeds:
            trial_params = MlpParams(**{**params.__dict__, "hidden": hidden, "seed": seed})
            _, _, confusion = mlp_train(matrix, trial_params)
            runs.append(1.0 - ssa(confusion))
        errors[hidden] = float(np.mean(runs))
    best = min(errors, key=lambda h: (errors[h], h))
    logger.info(f"Hidden-node sweep picked {best} (errors {errors})")
    return best, errors


# Per-cell evaluation
@dataclass
class CellResult:
    md_confusion: ConfusionCounts
    ann_confusion: ConfusionCounts
    md_predictions: List[ClassLabel]
    selection: Optional[SelectionResult] = None
    ann_selected_columns: List[int] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


def evaluate_cell(matrix: FeatureMatrix, k: int, shrinkage: float, mlp_params: MlpParams,
                  nested: bool = False, outlier_filter: bool = False) -> CellResult:
    """Run both classifiers on one (subject, hand, condition) feature matrix"""
    notes: List[str] = []
    if nested:
        md_pred, md_conf = md_loo_nested(matrix, k, shrinkage)
        train_idx, test_idx = stratified_split(matrix.labels, mlp_params.train_ratio, mlp_params.seed)
        ann_columns = select_top_k(matrix.take_rows(train_idx), k).selected_columns
        _, _, ann_conf = mlp_train(matrix.take_columns(ann_columns), mlp_params, (train_idx, test_idx))
        notes.append("nested selection")
        if outlier_filter:
            notes.append("outlier filter skipped under nested selection")
        return CellResult(md_confusion=md_conf, ann_confusion=ann_conf, md_predictions=md_pred,
                          ann_selected_columns=ann_columns, notes=notes)

    selection = select_top_k(matrix, k)
    reduced = matrix.take_columns(selection.selected_columns)
    if outlier_filter:
        reduced, dropped = md_outlier_filter(reduced, shrinkage)
        notes.append(f"outlier filter dropped {len(dropped)} trials")
    md_pred, md_conf = md_loo_classify(reduced, shrinkage)
    _, _, ann_conf = mlp_train(reduced, mlp_params)
    return CellResult(md_confusion=md_conf, ann_confusion=ann_conf, md_predictions=md_pred,
                      selection=selection, ann_selected_columns=selection.selected_columns,
                      notes=notes)


def permutation_null(matrix: FeatureMatrix, k: int, shrinkage: float, mlp_params: MlpParams,
                     seeds: Sequence[int], nested: bool = True) -> Dict[str, List[float]]:
    """SSA of both classifiers on label-permuted copies of the matrix, one per seed"""
    out: Dict[str, List[float]] = {"MD": [], "ANN": []}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        permuted = [matrix.labels[i] for i in rng.permutation(len(matrix.labels))]
        params = MlpParams(**{**mlp_params.__dict__, "seed": seed})
        result = evaluate_cell(matrix.with_labels(permuted), k, shrinkage, params, nested=nested)
        out["MD"].append(ssa(result.md_confusion))
        out["ANN"].append(ssa(result.ann_confusion))
    return out
