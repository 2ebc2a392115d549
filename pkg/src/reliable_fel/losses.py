"""Training objectives: class NLL on the corrected distribution, anchor spread, center pull."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .exceptions import ConfigError, ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    anchor: float = 1.0
    center: float = 1.0

    def __post_init__(self):
        values = (self.cls, self.anchor, self.center)
        if any(v < 0 for v in values) or not any(v > 0 for v in values):
            raise ConfigError(f"loss weights must be nonnegative and not all zero, got {values}")


def class_distribution_loss(final, targets):
    """Mean over samples of -sum_j y_j log L_j, with L clamped below at 1e-12.

    ``targets`` are one-hot or smoothed rows matching ``final``.
    """
    final = ag.as_tensor(final)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != final.shape:
        raise ShapeError(f"targets {targets.shape} do not match predictions {final.shape}")
    logp = ag.log(ag.clamp(final, LOG_FLOOR))
    return ag.tsum(logp * targets) * (-1.0 / final.shape[0])


def anchor_loss(anchors):
    """Negative mean squared distance over distinct unordered anchor pairs."""
    anchors = ag.as_tensor(anchors)
    flat = ag.reshape(anchors, (-1, anchors.shape[-1]))
    n = flat.shape[0]
    if n < 2:
        logger.warning("anchor_loss: %d anchor(s), no pairs to separate", n)
        return ag.Tensor(0.0)
    # sum_{i<j} |a_i - a_j|^2 = n * sum_i |a_i|^2 - |sum_i a_i|^2
    total = ag.tsum(flat, axis=0)
    pair_sum = ag.tsum(flat * flat) * float(n) - ag.tsum(total * total)
    return pair_sum * (-2.0 / (n * (n - 1)))


def center_loss(embeddings, labels, anchors):
    """Mean over samples of the squared distance to the nearest anchor of the true class.

    On ties the gradient goes to the lowest-index anchor.
    """
    embeddings, anchors = ag.as_tensor(embeddings), ag.as_tensor(anchors)
    labels = np.asarray(labels)
    n_cls = anchors.shape[0]
    if labels.shape != (embeddings.shape[0],):
        raise ShapeError(f"{labels.shape} labels for {embeddings.shape[0]} embeddings")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ContractError(f"labels must lie in [0, {n_cls})")
    own = anchors[labels]  # (B, K, dim)
    diff = own - ag.reshape(embeddings, (embeddings.shape[0], 1, embeddings.shape[1]))
    sq = ag.tsum(diff * diff, axis=-1)
    nearest = np.argmin(sq.data, axis=1)
    picked = sq[np.arange(len(labels)), nearest]
    return ag.mean(picked)


def total_loss(parts, weights=LossWeights()):
    """Weighted sum of the ``cls``, ``anchor`` and ``center`` entries present in ``parts``."""
    scale = {"cls": weights.cls, "anchor": weights.anchor, "center": weights.center}
    out = ag.Tensor(0.0)
    for name, value in parts.items():
        value = ag.as_tensor(value)
        if not np.all(np.isfinite(value.data)):
            raise NumericError(f"loss term {name!r} is not finite")
        if scale[name]:
            out = out + value * scale[name]
    return out
