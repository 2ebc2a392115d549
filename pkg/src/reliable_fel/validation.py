"""Input packing and validation for the estimator API.

scikit-learn wants a 2-D ``X``; the two streams are flattened side by side,
image first, so that splitters, pipelines and ``clone`` work unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def pack_streams(images, landmarks):
    images = np.asarray(images, dtype=np.float64)
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if images.ndim != 4 or landmarks.ndim != 4:
        raise ShapeError("expected images (n, S, S, C) and landmarks (n, A_c, S, S)")
    if len(images) != len(landmarks):
        raise ShapeError(f"{len(images)} images but {len(landmarks)} landmark maps")
    n = len(images)
    return np.concatenate([images.reshape(n, -1), landmarks.reshape(n, -1)], axis=1)


def stream_widths(image_size, image_channels, landmark_channels):
    return image_size * image_size * image_channels, landmark_channels * image_size * image_size


def unpack_streams(X, image_size, image_channels, landmark_channels):
    """Validate a packed matrix and split it back into (images, landmarks)."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    wi, wl = stream_widths(image_size, image_channels, landmark_channels)
    if X.shape[1] != wi + wl:
        raise ShapeError(f"X has {X.shape[1]} columns; geometry needs {wi} + {wl} = {wi + wl}")
    n = len(X)
    images = X[:, :wi].reshape(n, image_size, image_size, image_channels)
    landmarks = X[:, wi:].reshape(n, landmark_channels, image_size, image_size)
    return images, landmarks
