"""Classification and embedding-cluster metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ContractError, NumericError

logger = logging.getLogger(__name__)

REPORT_KEYS = ("accuracy", "macro_f1", "confusion", "db_score", "ch_score",
               "primary_std", "corrected_std")


def _pair(preds, labels):
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ContractError(f"{preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ContractError("metrics need at least one sample")
    return preds, labels


def accuracy(preds, labels):
    preds, labels = _pair(preds, labels)
    return float(np.mean(preds == labels))


def confusion_counts(preds, labels, n_classes):
    preds, labels = _pair(preds, labels)
    if labels.min() < 0 or labels.max() >= n_classes or preds.min() < 0 or preds.max() >= n_classes:
        raise ContractError(f"class indices must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def confusion_matrix(preds, labels, n_classes):
    """Row i holds the fraction of true-class-i samples predicted as each class."""
    counts = confusion_counts(preds, labels, n_classes).astype(np.float64)
    support = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, support, out=np.zeros_like(counts), where=support > 0)


def macro_f1(preds, labels, n_classes):
    """Unweighted mean of per-class F1; a class with no true or predicted samples scores 0."""
    counts = confusion_counts(preds, labels, n_classes)
    tp = np.diag(counts).astype(np.float64)
    denom = counts.sum(axis=0) + counts.sum(axis=1)  # 2TP + FP + FN
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def _clusters(embeddings, labels):
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError("cluster scores need at least two classes")
    centroids = np.stack([X[labels == c].mean(axis=0) for c in classes])
    return X, labels, classes, centroids


def davies_bouldin(embeddings, labels):
    """Mean over clusters of the worst (s_i + s_j) / d(c_i, c_j); lower is better."""
    X, labels, classes, centroids = _clusters(embeddings, labels)
    scatter = np.array([np.linalg.norm(X[labels == c] - centroids[i], axis=1).mean()
                        for i, c in enumerate(classes)])
    sep = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)
    off = ~np.eye(len(classes), dtype=bool)
    if np.any(sep[off] == 0):
        raise NumericError("two clusters share a centroid; Davies-Bouldin is undefined")
    ratio = np.where(off, (scatter[:, None] + scatter[None]) / np.where(off, sep, 1.0), -np.inf)
    return float(ratio.max(axis=1).mean())


def calinski_harabasz(embeddings, labels):
    """Between/within dispersion ratio scaled by degrees of freedom; higher is better.

    Returns ``inf`` (with a logged diagnostic) when every cluster is a single point.
    """
    X, labels, classes, centroids = _clusters(embeddings, labels)
    n, k = len(X), len(classes)
    if n <= k:
        raise ContractError("Calinski-Harabasz needs more samples than clusters")
    sizes = np.array([(labels == c).sum() for c in classes])
    mean = X.mean(axis=0)
    between = float((sizes * ((centroids - mean) ** 2).sum(axis=1)).sum())
    within = float(sum(((X[labels == c] - centroids[i]) ** 2).sum() for i, c in enumerate(classes)))
    if within == 0.0:
        logger.warning("calinski_harabasz: zero within-cluster dispersion, returning inf")
        return float("inf")
    return between * (n - k) / (within * (k - 1))


def distribution_spread(primary, corrected):
    """Standard deviation of all distribution entries pooled over the batch, for each batch."""
    primary, corrected = np.asarray(primary, dtype=np.float64), np.asarray(corrected, dtype=np.float64)
    if primary.shape != corrected.shape:
        raise ContractError(f"batch shapes differ: {primary.shape} vs {corrected.shape}")
    return float(primary.std()), float(corrected.std())


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    confusion: list
    db_score: float
    ch_score: float
    primary_std: float
    corrected_std: float

    def to_dict(self):
        return asdict(self)
