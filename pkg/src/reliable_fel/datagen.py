"""Synthetic two-stream expression data, augmentation, balanced sampling and label noise.

Each sample has a latent vector drawn around its class mean; the latent is
rendered through fixed smooth random bases into an RGB-like image and a
stack of landmark heat maps. Classes listed as confusion pairs share most
of their mean direction, so their samples overlap in both streams.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, DataError, ScarceClassWarning

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 8
    samples_per_class: int = 250
    separation: float = 3.0
    spread: float = 1.0
    confusion_pairs: tuple = ((0, 1), (2, 3))
    confusion_overlap: float = 0.8
    imbalance: float = 1.0
    n_groups: int = 16
    group_shift: float = 0.3
    latent_dim: int = 16
    image_size: int = 32
    image_channels: int = 3
    landmark_channels: int = 4
    pixel_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ConfigError("dataset needs at least one class")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")
        if self.separation <= 0:
            raise ConfigError("separation must be positive")
        if self.spread < 0 or self.group_shift < 0 or self.pixel_noise < 0:
            raise ConfigError("spread, group_shift and pixel_noise must be nonnegative")
        if not 0.0 <= self.confusion_overlap < 1.0:
            raise ConfigError("confusion_overlap must be in [0, 1)")
        if self.imbalance < 1.0:
            raise ConfigError("imbalance is a max:min class ratio and must be >= 1")
        if self.latent_dim < self.n_classes:
            raise ConfigError("latent_dim must be at least n_classes")
        if self.n_groups < 1:
            raise ConfigError("n_groups must be positive")
        for a, b in self.confusion_pairs:
            if not (0 <= a < self.n_classes and 0 <= b < self.n_classes) or a == b:
                raise ConfigError(f"bad confusion pair {(a, b)}")

    def class_counts(self):
        n = self.n_classes
        if n == 1:
            return np.array([self.samples_per_class])
        decay = self.imbalance ** (-np.arange(n) / (n - 1))
        return np.maximum(1, np.round(self.samples_per_class * decay)).astype(int)


@dataclass
class Sample:
    image: np.ndarray       # (S, S, C) in [0, 1]
    landmark: np.ndarray    # (A_c, S, S) in [0, 1]
    label: int
    group: int


@dataclass
class Dataset:
    images: np.ndarray
    landmarks: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    latents: np.ndarray | None = None
    class_means: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(self.images[i], self.landmarks[i], int(self.labels[i]), int(self.groups[i]))

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.landmarks[idx], self.labels[idx], self.groups[idx],
                       None if self.latents is None else self.latents[idx], self.class_means)


def _smooth_bases(rng, n, shape, sigma):
    """``n`` unit-variance smooth random fields; per pixel the squared bases sum to ~1."""
    raw = rng.standard_normal((n, *shape))
    axes_sigma = [0.0] + [sigma if s > 4 else 0.0 for s in shape]
    smooth = ndimage.gaussian_filter(raw, sigma=axes_sigma, mode="wrap")
    smooth /= smooth.std(axis=tuple(range(1, smooth.ndim)), keepdims=True)
    return smooth / np.sqrt(n)


def class_means(spec, rng):
    """Orthonormal class directions, with the second member of each confusion pair
    rotated toward the first so the pair shares ``confusion_overlap`` of its direction."""
    q, _ = np.linalg.qr(rng.standard_normal((spec.latent_dim, spec.latent_dim)))
    dirs = q.T[: spec.n_classes].copy()
    c = spec.confusion_overlap
    for a, b in spec.confusion_pairs:
        dirs[b] = c * dirs[a] + np.sqrt(1.0 - c * c) * dirs[b]
    return spec.separation * dirs


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Render a deterministic dataset from ``spec`` (a pure function of ``spec`` and its seed)."""
    rng = np.random.default_rng(spec.seed)
    S, C, A = spec.image_size, spec.image_channels, spec.landmark_channels
    means = class_means(spec, rng)
    group_dirs = rng.standard_normal((spec.n_groups, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    img_basis = _smooth_bases(rng, spec.latent_dim, (S, S, C), S / 8)
    lm_basis = _smooth_bases(rng, spec.latent_dim, (A, S, S), S / 10)

    labels = np.repeat(np.arange(spec.n_classes), spec.class_counts())
    n = len(labels)
    groups = rng.integers(0, spec.n_groups, size=n)
    z = (means[labels] + spec.spread * rng.standard_normal((n, spec.latent_dim))
         + spec.group_shift * spec.separation * group_dirs[groups])

    img_logit = np.tensordot(z, img_basis, axes=1)
    lm_logit = np.tensordot(z, lm_basis, axes=1)
    images = 1.0 / (1.0 + np.exp(-img_logit))
    landmarks = 1.0 / (1.0 + np.exp(-lm_logit))
    if spec.pixel_noise:
        images = images + spec.pixel_noise * rng.standard_normal(images.shape)
        landmarks = landmarks + spec.pixel_noise * rng.standard_normal(landmarks.shape)
    return Dataset(np.clip(images, 0.0, 1.0), np.clip(landmarks, 0.0, 1.0),
                   labels, groups, z, means)


def nearest_centroid_accuracy(dataset):
    """Oracle: classify latents by the nearest true class mean."""
    d = ((dataset.latents[:, None, :] - dataset.class_means[None]) ** 2).sum(-1)
    return float(np.mean(np.argmin(d, axis=1) == dataset.labels))


# -- augmentation -------------------------------------------------------------

def hflip(sample):
    return replace(sample, image=sample.image[:, ::-1, :], landmark=sample.landmark[:, :, ::-1])


def center_crop(images, landmarks, crop):
    """Center crops of (n, S, S, C) images and (n, A_c, S, S) maps."""
    S = images.shape[1]
    if crop > S:
        raise ConfigError(f"crop {crop} exceeds image size {S}")
    o = (S - crop) // 2
    return images[:, o:o + crop, o:o + crop, :], landmarks[:, :, o:o + crop, o:o + crop]


def augment(sample, rng, crop=28, max_rotation=15.0, jitter=0.1, flip_prob=0.5, center=False):
    """Rotate, crop, flip and colour-jitter one sample; label and group are kept.

    Geometric steps are applied identically to both streams; gain/offset
    jitter touches only the image. Outputs are clipped to [0, 1].
    """
    image, landmark = sample.image, sample.landmark
    S = image.shape[0]
    if crop > S:
        raise ConfigError(f"crop {crop} exceeds image size {S}")
    angle = rng.uniform(-max_rotation, max_rotation) if max_rotation else 0.0
    if angle:
        image = ndimage.rotate(image, angle, axes=(0, 1), reshape=False, order=1, mode="nearest")
        landmark = ndimage.rotate(landmark, angle, axes=(1, 2), reshape=False, order=1, mode="nearest")
    if center:
        top = left = (S - crop) // 2
    else:
        top, left = rng.integers(0, S - crop + 1, size=2)
    image = image[top:top + crop, left:left + crop, :]
    landmark = landmark[:, top:top + crop, left:left + crop]
    if flip_prob and rng.random() < flip_prob:
        image, landmark = image[:, ::-1, :], landmark[:, :, ::-1]
    if jitter:
        c = image.shape[-1]
        image = image * rng.uniform(1 - jitter, 1 + jitter, c) + rng.uniform(-jitter, jitter, c)
    return Sample(np.clip(image, 0.0, 1.0), np.clip(landmark, 0.0, 1.0), sample.label, sample.group)


# -- data refinement ----------------------------------------------------------

@dataclass(frozen=True)
class RefinementConfig:
    per_group: int = 64     # N_pg
    per_class: int = 32     # B

    def __post_init__(self):
        if not self.per_group >= self.per_class >= 1:
            raise ConfigError(f"need per_group >= per_class >= 1, got "
                              f"{self.per_group}, {self.per_class}")


def refine_batch(labels, groups, rc: RefinementConfig, n_classes, rng):
    """Indices of one balanced epoch batch: exactly ``per_class`` samples of every class.

    At most ``per_group`` samples are first drawn from each group to form a
    pool; each class then takes ``per_class`` samples from the pool, falling
    back to the whole dataset and to sampling with replacement when scarce.
    """
    labels, groups = np.asarray(labels), np.asarray(groups)
    counts = np.bincount(labels, minlength=n_classes)
    missing = np.flatnonzero(counts[:n_classes] == 0)
    if missing.size:
        raise DataError(f"class {int(missing[0])} has no samples")

    pool = []
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        take = min(rc.per_group, members.size)
        pool.append(rng.choice(members, size=take, replace=False))
    pool = np.sort(np.concatenate(pool))

    batch = []
    for c in range(n_classes):
        cands = pool[labels[pool] == c]
        if cands.size < rc.per_class:
            cands = np.flatnonzero(labels == c)
        replace_ = cands.size < rc.per_class
        if replace_:
            warnings.warn(f"class {c} has {cands.size} samples < {rc.per_class}; "
                          "drawing with replacement", ScarceClassWarning, stacklevel=2)
        batch.append(rng.choice(cands, size=rc.per_class, replace=replace_))
    return rng.permutation(np.concatenate(batch))


# -- label corruption and smoothing -------------------------------------------

def inject_noise(labels, rate, n_classes, rng):
    """Flip each label with probability ``rate`` to a uniformly chosen other class.

    Returns the corrupted labels and the boolean flip mask.
    """
    if not 0.0 <= rate <= 0.5:
        raise ConfigError(f"noise rate must be in [0, 0.5], got {rate}")
    labels = np.asarray(labels)
    flip = rng.random(labels.shape) < rate
    if n_classes < 2:
        flip[:] = False
    shift = rng.integers(1, max(n_classes, 2), size=labels.shape)
    noisy = np.where(flip, (labels + shift) % max(n_classes, 1), labels)
    return noisy, flip


def smooth_labels(labels_or_one_hot, term, n_classes=None):
    """(1 - a) * one_hot + a / N_cls with a = term / 100."""
    if not 0.0 <= term <= 50.0:
        raise ConfigError(f"smoothing term must be in [0, 50], got {term}")
    y = np.asarray(labels_or_one_hot)
    if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
        if n_classes is None:
            raise ConfigError("n_classes is required for integer labels")
        y = np.eye(n_classes)[y]
    y = y.astype(np.float64)
    alpha = term / 100.0
    return (1.0 - alpha) * y + alpha / y.shape[-1]


# -- on-disk format -----------------------------------------------------------

def save_dataset(dataset, out_dir, spec=None):
    """Write a manifest, one little-endian float64 file per stream, and label/group CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = {}
    for name in ("images", "landmarks"):
        arr = np.ascontiguousarray(getattr(dataset, name), dtype="<f8")
        (out / f"{name}.f64").write_bytes(arr.tobytes())
        streams[name] = {"file": f"{name}.f64", "shape": list(arr.shape), "dtype": "<f8"}
    for name, column in (("labels", "label"), ("groups", "group")):
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([column])
            w.writerows([int(v)] for v in getattr(dataset, name))
    manifest = {"version": DATASET_FORMAT_VERSION, "n_samples": len(dataset), "streams": streams,
                "labels": "labels.csv", "groups": "groups.csv",
                "spec": None if spec is None else _spec_to_json(spec)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def load_dataset(path):
    src = Path(path)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset manifest in {src}: {exc}") from exc
    if manifest.get("version") != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported dataset version {manifest.get('version')}")
    arrays = {}
    for name, info in manifest["streams"].items():
        raw = (src / info["file"]).read_bytes()
        shape = tuple(info["shape"])
        if len(raw) != 8 * int(np.prod(shape)):
            raise DataError(f"{info['file']} has {len(raw)} bytes, expected {8 * int(np.prod(shape))}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    cols = {}
    for name in ("labels", "groups"):
        with open(src / manifest[name], newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        cols[name] = np.array([int(r[0]) for r in rows], dtype=np.int64)
    return Dataset(arrays["images"], arrays["landmarks"], cols["labels"], cols["groups"])


def _spec_to_json(spec):
    d = asdict(spec)
    d["confusion_pairs"] = [list(p) for p in spec.confusion_pairs]
    return d
