"""Training, evaluation and ablation sweeps driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, format_value
from .datagen import generate_dataset, inject_noise, load_dataset
from .estimator import ReliabilityBalancedClassifier
from .exceptions import CheckpointError, ConfigError, IncompatibleCheckpointError
from .metrics import (EvalReport, accuracy, calinski_harabasz, confusion_matrix,
                      davies_bouldin, distribution_spread, macro_f1)
from .validation import pack_streams

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.rfck"
RECORD_NAME = "run_record.json"
REPORT_NAME = "eval_report.json"
CONFUSION_NAME = "confusion.csv"

DEFAULT_SWEEPS = {
    "K": (0, 1, 4, 6, 8, 10, 20),
    "noise": (0, 5, 10, 15, 20, 25, 30, 35, 40, 50),
    "smoothing": (0, 5, 10, 11, 15, 18, 20, 25, 30, 35, 40, 50),
    "loss-setup": ("cls", "a", "c", "cls+a", "cls+a+c"),
    "rb-setup": ("Without RB", "Anchors", "MHSA", "Both"),
    "lambda": (0.1, 0.5, 1.0),
}
ABLATION_COLUMNS = ("sweep", "axis", "value", "seed", "accuracy", "macro_f1",
                    "primary_std", "corrected_std", "wall_clock_s", "status", "error")

RB_ARMS = {
    "Without RB": dict(enable_anchors=False, enable_mhsa=False),
    "Anchors": dict(enable_anchors=True, enable_mhsa=False),
    "MHSA": dict(enable_anchors=False, enable_mhsa=True),
    "Both": dict(enable_anchors=True, enable_mhsa=True),
}
LOSS_SETUPS = {
    "cls": (1.0, 0.0, 0.0),
    "a": (0.0, 1.0, 0.0),
    "c": (0.0, 0.0, 1.0),
    "cls+a": (1.0, 1.0, 0.0),
    "cls+a+c": (1.0, 1.0, 1.0),
}


@dataclass
class RunRecord:
    config_hash: str
    code_version: str
    seed: int
    epochs: list
    metrics: dict
    wall_clock_s: float
    checkpoint: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def deterministic_view(self):
        """Everything except timing and output location; equal for equal (config, seed)."""
        out = self.to_dict()
        del out["wall_clock_s"], out["checkpoint"]
        return out


@dataclass
class SplitData:
    X_train: np.ndarray
    y_train: np.ndarray
    y_train_clean: np.ndarray
    groups_train: np.ndarray
    flipped: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def derive_seed(base_seed, *coords):
    """Independent, reproducible seed for one coordinate tuple."""
    text = json.dumps([int(base_seed), *[str(c) for c in coords]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def prepare_data(config: ExperimentConfig) -> SplitData:
    """Load or generate the dataset, split it, and corrupt training labels only."""
    if config.data_dir:
        dataset = load_dataset(config.data_dir)
    else:
        dataset = generate_dataset(config.dataset_spec())
    idx = np.arange(len(dataset))
    tr, te = train_test_split(idx, test_size=config.test_fraction, stratify=dataset.labels,
                              random_state=config.data_seed)
    tr, te = np.sort(tr), np.sort(te)
    X = pack_streams(dataset.images, dataset.landmarks)
    n_classes = int(dataset.labels.max()) + 1
    noise_rng = np.random.default_rng(derive_seed(config.seed, "noise"))
    y_noisy, flipped = inject_noise(dataset.labels[tr], config.noise_rate, n_classes, noise_rng)
    return SplitData(X[tr], y_noisy, dataset.labels[tr], dataset.groups[tr], flipped,
                     X[te], dataset.labels[te])


def build_estimator(config: ExperimentConfig) -> ReliabilityBalancedClassifier:
    return ReliabilityBalancedClassifier(
        image_size=config.image_size, image_channels=config.image_channels,
        landmark_channels=config.landmark_channels, crop_size=config.crop_size,
        pool_size=config.pool_size, levels=config.levels, windows=config.windows,
        dim=config.dim, n_heads=config.n_heads, embed_dim=config.embed_dim,
        mlp_ratio=config.mlp_ratio, n_anchors=config.n_anchors, delta=config.delta,
        corrector_tokens=config.corrector_tokens, corrector_heads=config.corrector_heads,
        head_hidden=config.head_hidden, dropout=config.dropout,
        enable_anchors=config.enable_anchors, enable_mhsa=config.enable_mhsa,
        lambda_cls=config.lambda_cls, lambda_anchor=config.lambda_anchor,
        lambda_center=config.lambda_center, lr=config.lr, gamma=config.gamma,
        epochs=config.epochs, per_group=config.per_group, per_class=config.per_class,
        batch_size=config.batch_size or None, smoothing=config.smoothing,
        augment=config.augment, random_state=derive_seed(config.seed, "train"))


def report_for(model, X, y) -> EvalReport:
    """Accuracy, F1, confusion, cluster scores and distribution spread on (X, y)."""
    out = model.predict_distributions(X)
    n_classes = len(model.classes_)
    y_idx = np.searchsorted(model.classes_, y)
    preds = np.argmax(out["final"], axis=1)
    emb = out["embedding"]
    try:
        db = davies_bouldin(emb, y_idx)
    except Exception as exc:  # undefined on collapsed embeddings; report, do not abort
        logger.warning("davies_bouldin undefined: %s", exc)
        db = float("nan")
    try:
        ch = calinski_harabasz(emb, y_idx)
    except Exception as exc:
        logger.warning("calinski_harabasz undefined: %s", exc)
        ch = float("nan")
    p_std, c_std = distribution_spread(out["primary"], out["corrected"])
    return EvalReport(accuracy(preds, y_idx), macro_f1(preds, y_idx, n_classes),
                      confusion_matrix(preds, y_idx, n_classes).tolist(), db, ch, p_std, c_std)


def _meta(config):
    return {"config_hash": config.config_hash(), "code_version": __version__,
            "geometry": {k: format_value(getattr(config, k)) for k in GEOMETRY_KEYS}}


GEOMETRY_KEYS = ("image_size", "image_channels", "landmark_channels", "crop_size", "pool_size",
                 "levels", "windows", "dim", "n_heads", "embed_dim", "mlp_ratio", "n_anchors",
                 "corrector_tokens", "corrector_heads", "head_hidden", "enable_anchors",
                 "enable_mhsa")


def run_training(config: ExperimentConfig, data: SplitData | None = None):
    """Train and evaluate in memory; returns ``(model, RunRecord)`` without touching disk."""
    start = time.perf_counter()
    data = data or prepare_data(config)
    model = build_estimator(config)
    model.fit(data.X_train, data.y_train, data.groups_train)
    report = report_for(model, data.X_test, data.y_test)
    record = RunRecord(config.config_hash(), __version__, config.seed, model.history_,
                       report.to_dict(), time.perf_counter() - start)
    return model, record


def train(config: ExperimentConfig, out_dir=None):
    """Train, evaluate on the held-out split, write the checkpoint and RunRecord JSON."""
    out_dir = Path(out_dir or config.output_dir)
    model, record = run_training(config)
    ckpt = save_checkpoint(out_dir / CHECKPOINT_NAME, model.state_arrays(), _meta(config))
    record.checkpoint = str(ckpt)
    _write_json(out_dir / RECORD_NAME, record.to_dict())
    logger.info("trained %s: accuracy %.4f", config.config_hash(), record.metrics["accuracy"])
    return model, record


def load_model(config: ExperimentConfig, checkpoint_path):
    arrays, meta = load_checkpoint(checkpoint_path)
    expected = _meta(config)["geometry"]
    stored = meta.get("geometry", {})
    diff = [f"{k}: checkpoint {stored.get(k)!r} vs config {v!r}"
            for k, v in expected.items() if k in stored and stored[k] != v]
    if diff:
        raise IncompatibleCheckpointError("checkpoint geometry mismatch: " + "; ".join(diff))
    return build_estimator(config).load_state_arrays(arrays)


def evaluate(config: ExperimentConfig, checkpoint_path, out_dir=None, split="test"):
    """Score a saved model; writes the EvalReport JSON and the confusion CSV."""
    if split not in ("test", "train"):
        raise ConfigError(f"split must be 'test' or 'train', got {split!r}")
    model = load_model(config, checkpoint_path)
    data = prepare_data(config)
    X, y = (data.X_test, data.y_test) if split == "test" else (data.X_train, data.y_train_clean)
    report = report_for(model, X, y)
    out_dir = Path(out_dir or config.output_dir)
    _write_json(out_dir / REPORT_NAME, report.to_dict())
    write_confusion_csv(out_dir / CONFUSION_NAME, report.confusion, model.classes_)
    return report


def write_confusion_csv(path, confusion, classes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *[str(c) for c in classes]])
        for c, row in zip(classes, confusion):
            w.writerow([str(c), *[repr(float(v)) for v in row]])


def _write_json(path, obj):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
        tmp.replace(path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise CheckpointError(f"could not write {path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# -- ablations -------------------------------------------------------------

def sweep_cells(config: ExperimentConfig, sweep: str):
    """``(axis, value, config)`` for every cell of a sweep."""
    if sweep not in DEFAULT_SWEEPS:
        raise ConfigError(f"unknown sweep {sweep!r}; choose from {sorted(DEFAULT_SWEEPS)}")
    values = config.sweep_values or DEFAULT_SWEEPS[sweep]
    cells = []
    if sweep == "K":
        cells = [("K", v, dict(n_anchors=int(v))) for v in values]
    elif sweep == "noise":
        cells = [("noise", v, dict(noise_rate=float(v) / 100)) for v in values]
    elif sweep == "smoothing":
        cells = [("smoothing", v, dict(smoothing=float(v))) for v in values]
    elif sweep == "loss-setup":
        for name in values:
            if name not in LOSS_SETUPS:
                raise ConfigError(f"unknown loss setup {name!r}")
            w = LOSS_SETUPS[name]
            cells.append(("loss", name, dict(lambda_cls=w[0], lambda_anchor=w[1],
                                             lambda_center=w[2])))
    elif sweep == "rb-setup":
        for name in values:
            if name not in RB_ARMS:
                raise ConfigError(f"unknown reliability-balancing arm {name!r}")
            cells.append(("rb", name, RB_ARMS[name]))
    else:
        for key in ("lambda_cls", "lambda_anchor", "lambda_center"):
            cells += [(key, v, {key: float(v)}) for v in values]
    out = []
    for axis, value, changes in cells:
        cell_seed = derive_seed(config.seed, sweep, axis, value)
        try:
            cell_config = config.with_(seed=cell_seed, sweep_values=(), **changes)
        except ConfigError as exc:
            cell_config = exc
        out.append((axis, value, cell_config))
    return out


def ablate(config: ExperimentConfig, sweep: str, out_dir=None):
    """Run one train+evaluate per cell; returns the per-cell rows.

    Writes ``ablation_<sweep>_cells.csv`` (one row per cell, failures marked
    ``ERROR`` with the message) and ``ablation_<sweep>.csv`` laid out like the
    corresponding published table.
    """
    out_dir = Path(out_dir or config.output_dir)
    rows = []
    for axis, value, cell in sweep_cells(config, sweep):
        row = dict.fromkeys(ABLATION_COLUMNS, "")
        row.update(sweep=sweep, axis=axis, value=value)
        try:
            if isinstance(cell, Exception):
                raise cell
            row["seed"] = cell.seed
            _, record = run_training(cell)
            m = record.metrics
            row.update(accuracy=m["accuracy"], macro_f1=m["macro_f1"],
                       primary_std=m["primary_std"], corrected_std=m["corrected_std"],
                       wall_clock_s=round(record.wall_clock_s, 3), status="ok")
        except Exception as exc:  # a failed cell is recorded, the sweep goes on
            logger.warning("ablation cell %s=%s failed: %s", axis, value, exc)
            row.update(status="ERROR", error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
        rows.append(row)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"ablation_{sweep}_cells.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    with open(out_dir / f"ablation_{sweep}.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(table_layout(sweep, rows))
    return rows


def _cell(row, metric="accuracy"):
    return row[metric] if row["status"] == "ok" else "ERROR"


def table_layout(sweep, rows):
    """Arrange cell rows like the published tables (header row first).

    K, noise and smoothing put the swept values across the columns; the
    lambda grid has one row per value and one column per weight; the loss and
    reliability setups have one row per setup.
    """
    if sweep in ("K", "noise", "smoothing"):
        header = [sweep, *[r["value"] for r in rows]]
        return [header] + [[m, *[_cell(r, m) for r in rows]] for m in ("accuracy", "macro_f1")]
    if sweep == "lambda":
        axes = ("lambda_cls", "lambda_anchor", "lambda_center")
        values = list(dict.fromkeys(r["value"] for r in rows))
        table = [["lambda", *axes]]
        for v in values:
            by_axis = {r["axis"]: r for r in rows if r["value"] == v}
            table.append([v, *[_cell(by_axis[a]) if a in by_axis else "" for a in axes]])
        return table
    label = "loss" if sweep == "loss-setup" else "setup"
    return [[label, "accuracy", "macro_f1"]] + [[r["value"], _cell(r), _cell(r, "macro_f1")]
                                                 for r in rows]
