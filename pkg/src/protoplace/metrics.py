"""ZSL / GZSL inference and evaluation.

Per-class top-1 accuracies, the harmonic mean of the seen and unseen GZSL
accuracies, calibrated-stacking sweeps over the seen-score penalty, and
prototype-similarity matrices for heat-map emission.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset
from .errors import ParameterError, ValidationError
from .linalg import as_matrix
from .prototypes import PrototypeModel, project_prototypes


@dataclass
class EvalReport:
    T: float | None           # ZSL per-class top-1 on unseen
    U: float | None           # GZSL per-class top-1 on unseen
    S: float | None           # GZSL per-class top-1 on seen
    H: float | None
    delta: float
    per_class: dict[int, float] = field(default_factory=dict)


@dataclass
class SimilarityMatrix:
    class_ids: np.ndarray
    matrix: np.ndarray
    zero_norm: np.ndarray  # bool flags per prototype


def _cosine_scores(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    fn = np.linalg.norm(features, axis=1)
    pn = np.linalg.norm(prototypes, axis=1)
    fh = features / np.where(fn > 0, fn, 1.0)[:, None]
    ph = prototypes / np.where(pn > 0, pn, 1.0)[:, None]
    fh[fn == 0] = 0.0
    ph[pn == 0] = 0.0
    return fh @ ph.T


def _argmax_by_id(scores: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
    # columns sorted by ascending class id; np.argmax takes the first maximum,
    # so ties break toward the smallest id
    order = np.argsort(class_ids, kind="stable")
    best = np.argmax(scores[:, order], axis=1)
    return class_ids[order][best]


def zsl_predict(prototypes, class_ids, features) -> np.ndarray:
    """Nearest-prototype class id per feature row (cosine, deterministic ties)."""
    prototypes = as_matrix(prototypes, "prototypes")
    if prototypes.shape[0] == 0:
        raise ParameterError("at least one prototype required")
    class_ids = np.asarray(class_ids, dtype=np.int64).ravel()
    if class_ids.shape[0] != prototypes.shape[0]:
        raise ValidationError("one class id per prototype required")
    features = as_matrix(features, "features")
    return _argmax_by_id(_cosine_scores(features, prototypes), class_ids)


def gzsl_predict(prototypes, class_ids, seen_mask, features, delta: float) -> np.ndarray:
    """Argmax over all classes with seen scores reduced by the calibration factor."""
    prototypes = as_matrix(prototypes, "prototypes")
    class_ids = np.asarray(class_ids, dtype=np.int64).ravel()
    seen_mask = np.asarray(seen_mask, dtype=bool).ravel()
    if not (class_ids.shape[0] == prototypes.shape[0] == seen_mask.shape[0]):
        raise ValidationError("prototypes, class ids, and seen mask must align")
    features = as_matrix(features, "features")
    scores = _cosine_scores(features, prototypes) - delta * seen_mask[None, :]
    return _argmax_by_id(scores, class_ids)


def per_class_accuracy(preds, labels, class_set) -> tuple[float, dict[int, float]]:
    """Unweighted mean over classes of within-class top-1 accuracy."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    classes = np.unique(np.asarray(class_set, dtype=np.int64))
    stray = np.setdiff1d(labels, classes)
    if stray.size:
        raise ValidationError(f"label {stray[0]} outside the evaluated class set")
    per_class: dict[int, float] = {}
    for c in classes:
        mask = labels == c
        if mask.any():
            per_class[int(c)] = float(np.mean(preds[mask] == c))
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return mean, per_class


def harmonic_mean(u: float, s: float) -> float:
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def prototype_similarity(prototypes, class_ids=None) -> SimilarityMatrix:
    """Pairwise cosine matrix; symmetric, unit diagonal for nonzero prototypes."""
    prototypes = as_matrix(prototypes, "prototypes")
    if prototypes.shape[0] == 0:
        raise ParameterError("at least one prototype required")
    if class_ids is None:
        class_ids = np.arange(prototypes.shape[0], dtype=np.int64)
    class_ids = np.asarray(class_ids, dtype=np.int64).ravel()
    norms = np.linalg.norm(prototypes, axis=1)
    zero = norms == 0
    ph = prototypes / np.where(zero, 1.0, norms)[:, None]
    ph[zero] = 0.0
    m = ph @ ph.T
    m = (m + m.T) / 2.0
    np.fill_diagonal(m, np.where(zero, 0.0, 1.0))
    return SimilarityMatrix(class_ids=class_ids, matrix=m, zero_norm=zero)


def evaluate(model: PrototypeModel, ds: SplitDataset, delta: float) -> EvalReport:
    """T on test_unseen (unseen prototypes only); U, S via calibrated stacking."""
    seen = np.sort(ds.seen_classes)
    unseen = np.sort(ds.unseen_classes)
    per_class: dict[int, float] = {}

    t_acc = None
    if unseen.size and ds.test_unseen_idx.size:
        protos_u = project_prototypes(model, ds.attributes, unseen)
        preds = zsl_predict(protos_u, unseen, ds.features[ds.test_unseen_idx])
        t_acc, _ = per_class_accuracy(preds, ds.labels[ds.test_unseen_idx], unseen)

    u_acc = s_acc = None
    if seen.size + unseen.size:
        union = np.concatenate([seen, unseen])
        protos = project_prototypes(model, ds.attributes, union)
        mask = np.concatenate([np.ones(seen.size, bool), np.zeros(unseen.size, bool)])
        if ds.test_unseen_idx.size:
            preds = gzsl_predict(protos, union, mask,
                                 ds.features[ds.test_unseen_idx], delta)
            u_acc, pc = per_class_accuracy(preds, ds.labels[ds.test_unseen_idx], union)
            per_class.update(pc)
        if ds.test_seen_idx.size:
            preds = gzsl_predict(protos, union, mask,
                                 ds.features[ds.test_seen_idx], delta)
            s_acc, pc = per_class_accuracy(preds, ds.labels[ds.test_seen_idx], union)
            per_class.update(pc)

    h = harmonic_mean(u_acc, s_acc) if (u_acc is not None and s_acc is not None) \
        else None
    return EvalReport(T=t_acc, U=u_acc, S=s_acc, H=h, delta=float(delta),
                      per_class=per_class)


def cs_sweep(
    model: PrototypeModel, ds: SplitDataset, delta_grid
) -> tuple[list[EvalReport], float]:
    """Evaluate along the calibration grid; returns reports and the best-H delta."""
    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ParameterError("delta grid must be nonempty")
    reports = [evaluate(model, ds, d) for d in grid]
    best_delta = grid[0]
    best_h = -1.0
    for rep in reports:
        h = rep.H if rep.H is not None else -1.0
        if h > best_h:
            best_h = h
            best_delta = rep.delta
    return reports, best_delta


def default_delta_grid() -> list[float]:
    return [round(0.02 * i, 2) for i in range(51)]
