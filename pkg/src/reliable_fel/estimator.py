"""scikit-learn classifier wrapping the encoder, reliability balancing and training recipe."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from . import autograd as ag
from .autograd import Tensor
from .datagen import RefinementConfig, Sample, augment, center_crop, refine_batch, smooth_labels
from .encoder import FusionEncoder
from .exceptions import ConfigError, IncompatibleCheckpointError, NumericError, ShapeError
from .losses import LossWeights, anchor_loss, center_loss, class_distribution_loss, total_loss
from .nn import Module
from .optim import AdamState, adam_step
from .reliability import ReliabilityBalancer
from .validation import unpack_streams

logger = logging.getLogger(__name__)


class FusionModel(Module):
    """Encoder followed by reliability balancing."""

    def __init__(self, encoder, balancer):
        self.encoder = encoder
        self.balancer = balancer

    def forward(self, images, landmarks):
        e = self.encoder(images, landmarks)
        return e, self.balancer(e)


class ReliabilityBalancedClassifier(ClassifierMixin, BaseEstimator):
    """Two-stream window cross-attention classifier with anchor/attention label correction.

    ``X`` is the packed matrix from :func:`reliable_fel.validation.pack_streams`:
    per row, the (image_size, image_size, image_channels) image followed by the
    (landmark_channels, image_size, image_size) landmark maps.

    Training runs ``epochs`` rounds; each round draws a balanced batch of
    ``per_class`` samples per class (after capping each group at
    ``per_group``), augments it, and takes Adam steps over minibatches of
    ``batch_size`` (``None`` means one step on the whole round's batch).
    The learning rate decays by ``gamma`` after every round.

    Setting ``enable_anchors=False`` (or ``n_anchors=0``) drops the geometric
    correction and its two losses; ``enable_mhsa=False`` drops the attentive
    correction. With both off, predictions are the plain head softmax.
    """

    def __init__(self, image_size=32, image_channels=3, landmark_channels=4, crop_size=28,
                 pool_size=16, levels=(8, 4, 2), windows=(4, 2, 2), dim=64, n_heads=4,
                 embed_dim=64, mlp_ratio=2, n_anchors=8, delta=1.0, corrector_tokens=4,
                 corrector_heads=4, head_hidden=64, dropout=0.5, enable_anchors=True,
                 enable_mhsa=True, lambda_cls=1.0, lambda_anchor=1.0, lambda_center=1.0,
                 lr=3e-4, gamma=0.995, epochs=60, per_group=64, per_class=32, batch_size=None,
                 smoothing=0.0, augment=True, random_state=0):
        self.image_size = image_size
        self.image_channels = image_channels
        self.landmark_channels = landmark_channels
        self.crop_size = crop_size
        self.pool_size = pool_size
        self.levels = levels
        self.windows = windows
        self.dim = dim
        self.n_heads = n_heads
        self.embed_dim = embed_dim
        self.mlp_ratio = mlp_ratio
        self.n_anchors = n_anchors
        self.delta = delta
        self.corrector_tokens = corrector_tokens
        self.corrector_heads = corrector_heads
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.enable_anchors = enable_anchors
        self.enable_mhsa = enable_mhsa
        self.lambda_cls = lambda_cls
        self.lambda_anchor = lambda_anchor
        self.lambda_center = lambda_center
        self.lr = lr
        self.gamma = gamma
        self.epochs = epochs
        self.per_group = per_group
        self.per_class = per_class
        self.batch_size = batch_size
        self.smoothing = smoothing
        self.augment = augment
        self.random_state = random_state

    # -- construction ------------------------------------------------------

    def _build(self, n_classes, rng):
        if self.crop_size > self.image_size or self.pool_size > self.crop_size:
            raise ConfigError("need pool_size <= crop_size <= image_size")
        encoder = FusionEncoder(self.image_channels, self.landmark_channels, self.pool_size,
                                tuple(self.levels), tuple(self.windows), self.dim, self.n_heads,
                                self.embed_dim, self.mlp_ratio, rng)
        balancer = ReliabilityBalancer(self.embed_dim, n_classes, self.n_anchors, self.delta,
                                       self.corrector_tokens, self.corrector_heads,
                                       self.head_hidden, self.dropout, self.enable_anchors,
                                       self.enable_mhsa, rng)
        self.model_ = FusionModel(encoder, balancer)
        return self.model_

    @property
    def uses_anchors(self):
        return bool(self.enable_anchors and self.n_anchors > 0)

    def _unpack(self, X):
        return unpack_streams(X, self.image_size, self.image_channels, self.landmark_channels)

    # -- training ----------------------------------------------------------

    def fit(self, X, y, groups=None):
        images, landmarks = self._unpack(X)
        y = np.asarray(y)
        if y.shape != (len(images),):
            raise ShapeError(f"y has shape {y.shape}, expected ({len(images)},)")
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        groups = np.zeros(len(y), dtype=int) if groups is None else np.asarray(groups)
        if groups.shape != y.shape:
            raise ShapeError("groups must align with y")

        weights = LossWeights(self.lambda_cls, self.lambda_anchor, self.lambda_center)
        refinement = RefinementConfig(self.per_group, self.per_class)
        rng = np.random.default_rng(self.random_state)
        model = self._build(n_classes, rng).train()
        params = model.parameters()
        state = AdamState(lr0=self.lr, gamma=self.gamma)
        targets_all = smooth_labels(y_idx, self.smoothing, n_classes)

        self.history_ = []
        for epoch in range(self.epochs):
            idx = refine_batch(y_idx, groups, refinement, n_classes, rng)
            imgs, lms = self._training_views(images[idx], landmarks[idx], y_idx[idx], rng)
            step_size = len(idx) if self.batch_size is None else self.batch_size
            sums = {"cls": 0.0, "anchor": 0.0, "center": 0.0, "total": 0.0}
            n_steps = 0
            for step, start in enumerate(range(0, len(idx), step_size)):
                sl = slice(start, start + step_size)
                parts, loss = self._loss(model, imgs[sl], lms[sl], targets_all[idx[sl]],
                                         y_idx[idx[sl]], weights)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
                grads = ag.backward(loss)
                adam_step(params, [grads.get(p) for p in params], state)
                for k, v in parts.items():
                    sums[k] += v.item()
                sums["total"] += loss.item()
                n_steps += 1
            record = {k: v / n_steps for k, v in sums.items()}
            record.update(epoch=epoch, lr=state.lr)
            self.history_.append(record)
            logger.debug("epoch %d: %s", epoch, record)
            state.end_epoch()
        model.eval()
        self.optimizer_state_ = state
        return self

    def _training_views(self, images, landmarks, labels, rng):
        if not self.augment:
            return center_crop(images, landmarks, self.crop_size)
        out = [augment(Sample(i, l, int(c), 0), rng, crop=self.crop_size)
               for i, l, c in zip(images, landmarks, labels)]
        return np.stack([s.image for s in out]), np.stack([s.landmark for s in out])

    def _loss(self, model, images, landmarks, targets, labels, weights):
        e, dist = model(images, landmarks)
        parts = {"cls": class_distribution_loss(dist.final, targets)}
        if model.balancer.anchor_set is not None:
            anchors = model.balancer.anchor_set.anchors
            parts["anchor"] = anchor_loss(anchors)
            parts["center"] = center_loss(e, labels, anchors)
        return parts, total_loss(parts, weights)

    # -- inference ---------------------------------------------------------

    def _forward_eval(self, X, chunk=256):
        check_is_fitted(self, "model_")
        images, landmarks = self._unpack(X)
        images, landmarks = center_crop(images, landmarks, self.crop_size)
        model = self.model_.eval()
        out = {"embedding": [], "primary": [], "corrected": [], "final": []}
        with ag.no_grad():
            for start in range(0, len(images), chunk):
                e, dist = model(images[start:start + chunk], landmarks[start:start + chunk])
                out["embedding"].append(e.data)
                out["primary"].append(dist.primary.data)
                out["final"].append(dist.final.data)
                corrected = dist.corrected if dist.corrected is not None else dist.primary
                out["corrected"].append(corrected.data)
        return {k: np.concatenate(v) for k, v in out.items()}

    def predict_distributions(self, X):
        """Embeddings plus primary, corrected and final distributions for each row."""
        return self._forward_eval(X)

    def predict_proba(self, X):
        return self._forward_eval(X)["final"]

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        return self._forward_eval(X)["embedding"]

    # -- persistence -------------------------------------------------------

    def state_arrays(self):
        check_is_fitted(self, "model_")
        arrays = self.model_.state_dict()
        arrays["classes_"] = np.asarray(self.classes_, dtype=np.float64)
        return arrays

    def load_state_arrays(self, arrays):
        """Rebuild the network for these parameters and load ``arrays`` into it."""
        if "classes_" not in arrays:
            raise IncompatibleCheckpointError("checkpoint has no classes_ entry")
        classes = np.asarray(arrays["classes_"])
        self.classes_ = classes.astype(int) if np.all(classes == np.round(classes)) else classes
        model = self._build(len(classes), np.random.default_rng(0))
        model.load_state_dict({k: v for k, v in arrays.items() if k != "classes_"})
        model.eval()
        return self
