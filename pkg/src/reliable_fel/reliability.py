"""Confidence-weighted label correction on top of the embedding.

A classifier head gives the primary distribution ``l``. Two corrections are
formed from the embedding: a geometric one from soft similarity to
trainable class anchors, and an attentive one from self-attention over the
embedding's chunks. Corrections and the primary distribution are merged
with weights equal to their confidence, one minus normalized entropy.

All functions take and return :class:`~reliable_fel.autograd.Tensor` with
classes on the last axis, so they work per sample or batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, ContractError, ShapeError
from .nn import BatchNorm1d, Dropout, Linear, Module, MultiHeadSelfAttention

SIMPLEX_TOL = 1e-8
DEGENERATE_WEIGHT = 1e-12


def _check_simplex(p):
    d = p.data
    if np.any(d < -SIMPLEX_TOL) or np.any(np.abs(d.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ContractError("input is not a probability distribution")


def normalized_entropy(l):
    """Shannon entropy divided by log(N_cls): 1 for uniform, 0 for one-hot."""
    l = ag.as_tensor(l)
    _check_simplex(l)
    n = l.shape[-1]
    if n == 1:
        return ag.Tensor(np.zeros(l.shape[:-1]))
    h = ag.tsum(ag.xlogx(l), axis=-1) * (-1.0 / math.log(n))
    # rounding leaves e.g. a uniform over 3 an ulp below 1; rows with all
    # entries equal are exactly uniform, so pin them
    uniform = np.all(l.data == l.data[..., :1], axis=-1)
    return ag.where(uniform, 1.0, ag.clamp(h, 0.0, 1.0))


def confidence(l):
    return 1.0 - normalized_entropy(l)


def anchor_distance(e, a):
    e, a = ag.as_tensor(e), ag.as_tensor(a)
    if e.shape[-1] != a.shape[-1]:
        raise ShapeError(f"embedding width {e.shape[-1]} vs anchor width {a.shape[-1]}")
    diff = a - e
    return ag.sqrt(ag.tsum(diff * diff, axis=-1))


def pairwise_anchor_distances(e, anchors):
    """(B, dim) embeddings against (N_cls, K, dim) anchors -> (B, N_cls, K)."""
    e, anchors = ag.as_tensor(e), ag.as_tensor(anchors)
    if e.shape[-1] != anchors.shape[-1]:
        raise ShapeError(f"embedding width {e.shape[-1]} vs anchor width {anchors.shape[-1]}")
    lead = e.shape[:-1]
    e = ag.reshape(e, (*lead, 1, 1, e.shape[-1]))
    return anchor_distance(e, anchors)


def similarity_scores(e, anchors, delta=1.0):
    """Softmax of -distance/delta over all N_cls*K anchors jointly."""
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    anchors = ag.as_tensor(anchors)
    d = pairwise_anchor_distances(e, anchors)
    lead = d.shape[:-2]
    n_cls, k = anchors.shape[:2]
    s = ag.softmax(ag.reshape(d, (*lead, n_cls * k)) * -1.0, axis=-1, temperature=delta)
    return ag.reshape(s, (*lead, n_cls, k))


def geometric_correction(e, anchors, delta=1.0):
    """Similarity-weighted mix of anchor one-hot labels: per-class sum of scores."""
    return ag.tsum(similarity_scores(e, anchors, delta), axis=-1)


def confidence_mix(p, q):
    """(c_p * p + c_q * q) / (c_p + c_q); plain mean when both weights vanish."""
    p, q = ag.as_tensor(p), ag.as_tensor(q)
    cp = ag.reshape(confidence(p), (*p.shape[:-1], 1))
    cq = ag.reshape(confidence(q), (*q.shape[:-1], 1))
    total = cp + cq
    degenerate = total.data < DEGENERATE_WEIGHT
    safe_total = ag.where(degenerate, 1.0, total)
    weighted = (cp * p + cq * q) / safe_total
    return ag.where(degenerate, (p + q) * 0.5, weighted)


def fuse_corrections(t_g, t_a):
    return confidence_mix(t_g, t_a)


def final_distribution(l, t):
    return confidence_mix(l, t)


def predict(L):
    """Index of the largest probability; ties go to the lowest index."""
    data = L.data if isinstance(L, Tensor) else np.asarray(L)
    return np.argmax(data, axis=-1)


class ClassifierHead(Module):
    """MLP producing class logits: hidden blocks of Linear, ReLU, Dropout, BatchNorm."""

    def __init__(self, embed_dim, n_classes, hidden=64, n_hidden=2, dropout=0.5, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.embed_dim = embed_dim
        self.layers, self.drops, self.norms = [], [], []
        width = embed_dim
        for _ in range(n_hidden):
            self.layers.append(Linear(width, hidden, rng))
            self.drops.append(Dropout(dropout, rng))
            self.norms.append(BatchNorm1d(hidden))
            width = hidden
        self.out = Linear(width, n_classes, rng)

    def forward(self, e):
        if e.shape[-1] != self.embed_dim:
            raise ShapeError(f"head expects width {self.embed_dim}, got {e.shape[-1]}")
        x = e
        for layer, drop, norm in zip(self.layers, self.drops, self.norms):
            x = norm(drop(ag.relu(layer(x))))
        return self.out(x)


def primary_distribution(e, head):
    e = ag.as_tensor(e)
    squeeze = e.ndim == 1
    if squeeze:
        e = ag.reshape(e, (1, e.shape[0]))
    l = ag.softmax(head(e), axis=-1)
    return ag.reshape(l, (l.shape[-1],)) if squeeze else l


class AnchorSet(Module):
    """K trainable points per class; anchor (i, j) carries the one-hot label of class i."""

    def __init__(self, n_classes, k, embed_dim, delta=1.0, rng=None):
        if k < 1:
            raise ConfigError(f"need at least one anchor per class, got K={k}")
        if delta <= 0:
            raise ConfigError(f"delta must be positive, got {delta}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.anchors = Tensor(rng.standard_normal((n_classes, k, embed_dim)) / math.sqrt(embed_dim),
                              requires_grad=True)
        self.delta = delta

    @property
    def labels(self):
        n_cls, k = self.anchors.shape[:2]
        return np.repeat(np.eye(n_cls)[:, None, :], k, axis=1)

    def forward(self, e):
        return geometric_correction(e, self.anchors, self.delta)


class AttentiveCorrector(Module):
    """Self-attention over the embedding cut into ``n_tokens`` chunks, pooled to classes."""

    def __init__(self, embed_dim, n_classes, n_tokens=4, n_heads=4, rng=None):
        if n_tokens < 1 or embed_dim % n_tokens:
            raise ConfigError(f"embedding width {embed_dim} does not split into {n_tokens} tokens")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_tokens = n_tokens
        self.d_model = embed_dim // n_tokens
        self.attn = MultiHeadSelfAttention(self.d_model, n_heads, rng)
        self.out = Linear(self.d_model, n_classes, rng)

    def forward(self, e):
        e = ag.as_tensor(e)
        if e.shape[-1] != self.n_tokens * self.d_model:
            raise ConfigError(f"embedding width {e.shape[-1]} does not split into "
                              f"{self.n_tokens} tokens of {self.d_model}")
        tokens = ag.reshape(e, (*e.shape[:-1], self.n_tokens, self.d_model))
        pooled = ag.mean(self.attn(tokens), axis=-2)
        return ag.softmax(self.out(pooled), axis=-1)


def attentive_correction(e, corrector):
    return corrector(e)


@dataclass
class Distributions:
    primary: Tensor
    corrected: Tensor
    final: Tensor
    geometric: Tensor | None = None
    attentive: Tensor | None = None


class ReliabilityBalancer(Module):
    """Head plus optional anchor and attention corrections.

    With neither correction enabled the final distribution is the primary
    one; with one enabled it is mixed with the primary directly.
    """

    def __init__(self, embed_dim, n_classes, k=8, delta=1.0, n_tokens=4, n_heads=4,
                 hidden=64, dropout=0.5, enable_anchors=True, enable_mhsa=True, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_classes = n_classes
        self.head = ClassifierHead(embed_dim, n_classes, hidden, 2, dropout, rng)
        self.anchor_set = AnchorSet(n_classes, k, embed_dim, delta, rng) \
            if enable_anchors and k > 0 else None
        self.corrector = AttentiveCorrector(embed_dim, n_classes, n_tokens, n_heads, rng) \
            if enable_mhsa else None

    def forward(self, e):
        l = primary_distribution(e, self.head)
        t_g = self.anchor_set(e) if self.anchor_set is not None else None
        t_a = self.corrector(e) if self.corrector is not None else None
        if t_g is not None and t_a is not None:
            t = fuse_corrections(t_g, t_a)
        else:
            t = t_g if t_g is not None else t_a
        final = l if t is None else final_distribution(l, t)
        return Distributions(primary=l, corrected=t, final=final, geometric=t_g, attentive=t_a)
