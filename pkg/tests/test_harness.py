import csv
import json

import numpy as np
import pytest

from reliable_fel.checkpoint import load_checkpoint
from reliable_fel.datagen import generate_dataset, save_dataset
from reliable_fel.exceptions import CheckpointError, ConfigError, IncompatibleCheckpointError
from reliable_fel.harness import (ABLATION_COLUMNS, CHECKPOINT_NAME, CONFUSION_NAME, RECORD_NAME,
                                  REPORT_NAME, derive_seed, evaluate, load_model, prepare_data,
                                  run_training, sweep_cells, table_layout, train, ablate)
from reliable_fel.metrics import REPORT_KEYS

from .toy import tiny_config


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    model, record = train(tiny_config(), out)
    return out, model, record


def test_train_writes_artifacts(trained):
    out, model, record = trained
    assert (out / CHECKPOINT_NAME).exists()
    saved = json.loads((out / RECORD_NAME).read_text())
    assert saved == record.to_dict()
    assert set(saved) == {"config_hash", "code_version", "seed", "epochs", "metrics",
                          "wall_clock_s", "checkpoint", "extras"}
    assert saved["config_hash"] == tiny_config().config_hash()
    assert len(saved["epochs"]) == 40
    arrays, meta = load_checkpoint(out / CHECKPOINT_NAME)
    assert meta["geometry"]["levels"] == "2,1"


def test_checkpoint_reloads_to_same_predictions(trained):
    out, model, _ = trained
    data = prepare_data(tiny_config())
    again = load_model(tiny_config(), out / CHECKPOINT_NAME)
    assert np.array_equal(again.predict_proba(data.X_test), model.predict_proba(data.X_test))


def test_eval_on_training_set_after_convergence(trained, tmp_path):
    out, _, _ = trained
    report = evaluate(tiny_config(), out / CHECKPOINT_NAME, tmp_path, split="train")
    assert report.accuracy == 1.0
    saved = json.loads((tmp_path / REPORT_NAME).read_text())
    assert set(saved) == set(REPORT_KEYS)
    rows = list(csv.reader(open(tmp_path / CONFUSION_NAME)))
    assert rows[0] == ["true\\pred", "0", "1", "2"]
    assert np.array_equal(np.array([r[1:] for r in rows[1:]], dtype=float), np.eye(3))


def test_same_config_same_record(trained):
    _, _, first = trained
    _, second = run_training(tiny_config())
    assert second.deterministic_view() == first.deterministic_view()


def test_different_seed_differs(trained):
    _, _, first = trained
    _, other = run_training(tiny_config(seed=1, epochs=3))
    assert other.config_hash != first.config_hash


def test_geometry_mismatch(trained):
    out, _, _ = trained
    with pytest.raises(IncompatibleCheckpointError, match="dim"):
        load_model(tiny_config(dim=4, n_heads=2), out / CHECKPOINT_NAME)


def test_corrupt_checkpoint(trained, tmp_path):
    out, _, _ = trained
    blob = bytearray((out / CHECKPOINT_NAME).read_bytes())
    blob[1:5] = b"NOPE"
    bad = tmp_path / "bad.rfck"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        evaluate(tiny_config(), bad, tmp_path)
    assert not (tmp_path / REPORT_NAME).exists()


def test_noise_touches_training_labels_only():
    clean = prepare_data(tiny_config())
    noisy = prepare_data(tiny_config(noise_rate=0.5))
    assert np.array_equal(clean.y_test, noisy.y_test)
    assert np.array_equal(noisy.y_train_clean, clean.y_train)
    assert noisy.flipped.any()
    assert np.array_equal(noisy.y_train != noisy.y_train_clean, noisy.flipped)


def test_split_is_stratified():
    d = prepare_data(tiny_config())
    assert np.bincount(d.y_test).tolist() == [4, 4, 4]


def test_data_dir_is_read_only(tmp_path):
    cfg = tiny_config()
    save_dataset(generate_dataset(cfg.dataset_spec()), tmp_path / "data")
    before = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
    _, record = run_training(cfg.with_(data_dir=str(tmp_path / "data"), epochs=2))
    after = {p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()}
    assert before == after
    direct = prepare_data(cfg)
    loaded = prepare_data(cfg.with_(data_dir=str(tmp_path / "data")))
    assert np.array_equal(direct.X_train, loaded.X_train)


def test_derive_seed():
    assert derive_seed(0, "K", 8) == derive_seed(0, "K", 8)
    assert len({derive_seed(0, "K", k) for k in range(50)}) == 50
    assert 0 <= derive_seed(3, "noise") < 2 ** 32


def test_sweep_cells_default_values():
    cfg = tiny_config()
    assert [v for _, v, _ in sweep_cells(cfg, "K")] == [0, 1, 4, 6, 8, 10, 20]
    noise = sweep_cells(cfg, "noise")
    assert [c.noise_rate for _, _, c in noise] == [v / 100 for v in range(0, 45, 5)] + [0.5]
    assert [v for _, v, _ in sweep_cells(cfg, "rb-setup")] == ["Without RB", "Anchors", "MHSA",
                                                                 "Both"]
    assert len(sweep_cells(cfg, "lambda")) == 9
    with pytest.raises(ConfigError):
        sweep_cells(cfg, "dropout")


def test_ablate_k_sweep(tmp_path):
    rows = ablate(tiny_config(epochs=2, sweep_values=(0, 2)), "K", tmp_path)
    assert [r["status"] for r in rows] == ["ok", "ok"]
    with open(tmp_path / "ablation_K_cells.csv") as fh:
        cells = list(csv.DictReader(fh))
    assert tuple(cells[0]) == ABLATION_COLUMNS
    table = list(csv.reader(open(tmp_path / "ablation_K.csv")))
    assert table[0] == ["K", "0", "2"]
    assert [r[0] for r in table[1:]] == ["accuracy", "macro_f1"]


def test_failed_cell_is_marked_and_sweep_continues(tmp_path):
    # the MHSA arm builds a corrector whose heads do not divide its token width
    cfg = tiny_config(epochs=1, sweep_values=("Without RB", "Both"))
    rows = ablate(cfg.with_(embed_dim=8, corrector_tokens=8, corrector_heads=2), "rb-setup",
                  tmp_path)
    assert [r["status"] for r in rows] == ["ok", "ERROR"]
    assert rows[1]["error"]
    table = list(csv.reader(open(tmp_path / "ablation_rb-setup.csv")))
    assert table[0] == ["setup", "accuracy", "macro_f1"]
    assert table[2] == ["Both", "ERROR", "ERROR"]


def test_invalid_cell_config_is_recorded(tmp_path):
    rows = ablate(tiny_config(epochs=1, sweep_values=(10, 60)), "smoothing", tmp_path)
    assert [r["status"] for r in rows] == ["ok", "ERROR"]
    assert "ConfigError" in rows[1]["error"]


def test_lambda_table_layout():
    rows = [dict(axis=a, value=v, status="ok", accuracy=i, macro_f1=0)
            for i, (a, v) in enumerate((a, v) for a in ("lambda_cls", "lambda_anchor")
                                       for v in (0.1, 1.0))]
    table = table_layout("lambda", rows)
    assert table == [["lambda", "lambda_cls", "lambda_anchor", "lambda_center"],
                     [0.1, 0, 2, ""], [1.0, 1, 3, ""]]
