import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from reliable_fel.estimator import ReliabilityBalancedClassifier
from reliable_fel.exceptions import IncompatibleCheckpointError, NumericError, ShapeError
from reliable_fel.harness import build_estimator, prepare_data

from .toy import tiny_config


@pytest.fixture(scope="module")
def data():
    return prepare_data(tiny_config())


@pytest.fixture(scope="module")
def fitted(data):
    return build_estimator(tiny_config()).fit(data.X_train, data.y_train, data.groups_train)


def test_params_and_clone():
    est = ReliabilityBalancedClassifier(n_anchors=3, lr=0.01)
    params = est.get_params()
    assert params["n_anchors"] == 3 and params["lr"] == 0.01
    copy = clone(est)
    assert copy.get_params() == params and copy is not est
    assert est.set_params(epochs=2).epochs == 2


def test_predict_before_fit(data):
    with pytest.raises(NotFittedError):
        ReliabilityBalancedClassifier().predict(data.X_test)


def test_output_shapes(fitted, data):
    n = len(data.X_test)
    proba = fitted.predict_proba(data.X_test)
    assert proba.shape == (n, 3)
    assert np.allclose(proba.sum(1), 1)
    assert fitted.predict(data.X_test).shape == (n,)
    assert fitted.transform(data.X_test).shape == (n, 8)
    dists = fitted.predict_distributions(data.X_test)
    assert set(dists) == {"embedding", "primary", "corrected", "final"}
    assert len(fitted.history_) == 40


def test_learns_separable_task(fitted, data):
    assert fitted.score(data.X_test, data.y_test) == 1.0


def test_string_labels(data):
    names = np.array(["anger", "joy", "fear"])
    est = build_estimator(tiny_config(epochs=2)).fit(data.X_train, names[data.y_train])
    assert set(est.predict(data.X_test)) <= set(names)


def test_state_round_trip(fitted, data):
    fresh = build_estimator(tiny_config()).load_state_arrays(fitted.state_arrays())
    assert np.array_equal(fresh.predict_proba(data.X_test), fitted.predict_proba(data.X_test))


def test_state_rejects_other_geometry(fitted):
    with pytest.raises(IncompatibleCheckpointError):
        build_estimator(tiny_config(n_anchors=3)).load_state_arrays(fitted.state_arrays())
    arrays = dict(fitted.state_arrays())
    del arrays["classes_"]
    with pytest.raises(IncompatibleCheckpointError):
        build_estimator(tiny_config()).load_state_arrays(arrays)


def test_without_rb_is_head_softmax(data):
    est = build_estimator(tiny_config(epochs=3, enable_anchors=False, enable_mhsa=False))
    est.fit(data.X_train, data.y_train)
    d = est.predict_distributions(data.X_test)
    assert np.array_equal(d["final"], d["primary"])
    assert est.model_.balancer.anchor_set is None and est.model_.balancer.corrector is None
    assert all(h["anchor"] == 0 for h in est.history_)


def test_zero_anchors_disable_geometric_branch(data):
    est = build_estimator(tiny_config(epochs=1, n_anchors=0)).fit(data.X_train, data.y_train)
    assert est.model_.balancer.anchor_set is None


def test_bad_inputs(fitted, data):
    with pytest.raises(ShapeError):
        fitted.predict(data.X_test[:, :-1])
    with pytest.raises(ShapeError):
        build_estimator(tiny_config()).fit(data.X_train, data.y_train[:-1])
    with pytest.raises(ShapeError):
        build_estimator(tiny_config()).fit(data.X_train, data.y_train, data.groups_train[:-1])
    bad = data.X_test.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        fitted.predict(bad)
    with pytest.raises(ValueError):
        build_estimator(tiny_config()).fit(data.X_train, data.y_train + 0.5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises(data):
    est = build_estimator(tiny_config(epochs=3, lr=1e300))
    with pytest.raises(NumericError):
        est.fit(data.X_train, data.y_train)
