import numpy as np
import pytest
from sklearn import metrics as skm

from reliable_fel.exceptions import ContractError, NumericError
from reliable_fel.metrics import (REPORT_KEYS, EvalReport, accuracy, calinski_harabasz,
                                  confusion_counts, confusion_matrix, davies_bouldin,
                                  distribution_spread, macro_f1)


def brute_db(X, labels):
    classes = sorted(set(labels.tolist()))
    cent = {c: sum(X[i] for i in range(len(X)) if labels[i] == c) / list(labels).count(c)
            for c in classes}
    scat = {}
    for c in classes:
        pts = [X[i] for i in range(len(X)) if labels[i] == c]
        scat[c] = sum(np.sqrt(sum((p[j] - cent[c][j]) ** 2 for j in range(len(p)))) for p in pts) / len(pts)
    total = 0.0
    for a in classes:
        worst = -1.0
        for b in classes:
            if a != b:
                d = np.sqrt(sum((cent[a][j] - cent[b][j]) ** 2 for j in range(X.shape[1])))
                worst = max(worst, (scat[a] + scat[b]) / d)
        total += worst
    return total / len(classes)


def brute_ch(X, labels):
    classes = sorted(set(labels.tolist()))
    n, k = len(X), len(classes)
    mean = X.sum(axis=0) / n
    between = within = 0.0
    for c in classes:
        pts = X[labels == c]
        cent = pts.sum(axis=0) / len(pts)
        between += len(pts) * float(((cent - mean) ** 2).sum())
        within += float(sum(((p - cent) ** 2).sum() for p in pts))
    return between / (k - 1) / (within / (n - k))


class TestCounting:
    def test_accuracy_cases(self):
        assert accuracy([1, 2, 0], [1, 2, 0]) == 1.0
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 1]) == 0.5
        assert accuracy([0, 1, 2, 2, 1, 0], [0, 2, 2, 1, 1, 0]) == 4 / 6

    def test_macro_f1_cases(self):
        assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0
        assert macro_f1([0, 1, 0, 1], [0, 0, 1, 1], 2) == 0.5
        # class 2 is neither present nor predicted: contributes 0
        assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)

    def test_macro_f1_matches_sklearn_when_all_present(self, rng):
        for _ in range(20):
            y, p = rng.integers(0, 4, 40), rng.integers(0, 4, 40)
            y[:4] = p[:4] = np.arange(4)
            assert macro_f1(p, y, 4) == pytest.approx(skm.f1_score(y, p, average="macro"), abs=1e-12)

    def test_confusion_cases(self):
        np.testing.assert_array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3), np.eye(3))
        np.testing.assert_array_equal(confusion_matrix([0, 0, 0], [0, 1, 2], 3),
                                      [[1, 0, 0], [1, 0, 0], [1, 0, 0]])
        np.testing.assert_array_equal(confusion_matrix([0, 1, 1, 2, 0], [0, 0, 1, 2, 2], 3),
                                      [[0.5, 0.5, 0], [0, 1, 0], [0.5, 0, 0.5]])

    def test_empty_row_stays_zero(self):
        np.testing.assert_array_equal(confusion_matrix([0, 0], [0, 0], 2), [[1, 0], [0, 0]])

    def test_accuracy_is_trace_over_n(self, rng):
        y, p = rng.integers(0, 5, 60), rng.integers(0, 5, 60)
        assert accuracy(p, y) == np.trace(confusion_counts(p, y, 5)) / 60

    def test_permutation_invariance(self, rng):
        y, p = rng.integers(0, 4, 30), rng.integers(0, 4, 30)
        X = rng.standard_normal((30, 3))
        perm = rng.permutation(30)
        assert accuracy(p, y) == accuracy(p[perm], y[perm])
        assert macro_f1(p, y, 4) == macro_f1(p[perm], y[perm], 4)
        assert davies_bouldin(X, y) == pytest.approx(davies_bouldin(X[perm], y[perm]), rel=1e-12)
        assert calinski_harabasz(X, y) == pytest.approx(calinski_harabasz(X[perm], y[perm]),
                                                        rel=1e-12)

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            accuracy([0, 1], [0])
        with pytest.raises(ContractError):
            accuracy([], [])
        with pytest.raises(ContractError):
            confusion_counts([0, 3], [0, 1], 3)


class TestClusterScores:
    X4 = np.array([[0.0, 0.0], [0.0, 2.0], [4.0, 0.0], [4.0, 2.0]])
    y4 = np.array([0, 0, 1, 1])

    def test_db_hand_geometry(self):
        assert davies_bouldin(self.X4, self.y4) == pytest.approx(0.5, abs=1e-15)

    def test_ch_hand_geometry(self):
        assert calinski_harabasz(self.X4, self.y4) == pytest.approx(8.0, abs=1e-12)

    def test_db_singletons_zero(self):
        assert davies_bouldin(np.array([[0.0], [1.0]]), np.array([0, 1])) == 0.0

    def test_db_coincident_centroids(self):
        X = np.array([[1.0], [-1.0], [2.0], [-2.0]])
        with pytest.raises(NumericError):
            davies_bouldin(X, np.array([0, 0, 1, 1]))

    def test_ch_zero_within_is_inf(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        assert calinski_harabasz(X, np.array([0, 0, 1, 1])) == float("inf")

    def test_single_cluster_rejected(self):
        with pytest.raises(ContractError):
            davies_bouldin(np.zeros((3, 2)), np.zeros(3, int))

    @pytest.mark.parametrize("seed", range(50))
    def test_brute_force_and_sklearn_agree(self, seed):
        r = np.random.default_rng(seed)
        k = r.integers(2, 5)
        labels = np.concatenate([np.arange(k), r.integers(0, k, r.integers(4, 20))])
        X = r.standard_normal((len(labels), r.integers(1, 5))) + labels[:, None] * r.uniform(0, 3)
        db, ch = davies_bouldin(X, labels), calinski_harabasz(X, labels)
        assert abs(db - brute_db(X, labels)) <= 1e-9 * max(1.0, db)
        assert abs(ch - brute_ch(X, labels)) <= 1e-9 * max(1.0, ch)
        # scikit-learn expands |x - y|^2 as dot products, so only agrees to ~1e-9 relative
        assert db == pytest.approx(skm.davies_bouldin_score(X, labels), rel=1e-6)
        assert ch == pytest.approx(skm.calinski_harabasz_score(X, labels), rel=1e-6)

    def test_db_does_not_grow_when_clusters_tighten(self, rng):
        centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        noise = rng.standard_normal((30, 2))
        labels = np.repeat(np.arange(3), 10)
        prev = np.inf
        for sigma in (2.0, 1.0, 0.5, 0.1):
            X = centers[labels] + sigma * (noise - noise.reshape(3, 10, 2).mean(1).repeat(10, 0))
            db = davies_bouldin(X, labels)
            assert db <= prev + 1e-12
            prev = db

    def test_ch_scale_invariant_and_separation_monotone(self, rng):
        labels = np.repeat(np.arange(3), 8)
        noise = rng.standard_normal((24, 3))
        centers = rng.standard_normal((3, 3))
        X = centers[labels] + noise
        assert calinski_harabasz(3.5 * X, labels) == pytest.approx(calinski_harabasz(X, labels),
                                                                   rel=1e-12)
        wider = 2.0 * centers[labels] + noise
        assert calinski_harabasz(wider, labels) > calinski_harabasz(X, labels)


class TestSpread:
    def test_uniform_rows(self):
        u = np.full((5, 4), 0.25)
        assert distribution_spread(u, u) == (0.0, 0.0)

    def test_one_hot_batch(self):
        oh = np.eye(8)[[0, 3, 5]]
        p, _ = distribution_spread(oh, oh)
        assert p == pytest.approx(np.std([1] + [0] * 7), abs=1e-15)

    def test_mixing_toward_uniform_shrinks(self):
        oh = np.eye(8)[[0, 3, 5, 7]]
        p, c = distribution_spread(oh, 0.5 * oh + 0.5 / 8)
        assert c < p

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            distribution_spread(np.ones((2, 3)), np.ones((3, 3)))


def test_report_schema():
    r = EvalReport(1.0, 1.0, [[1.0]], 0.1, 2.0, 0.3, 0.2)
    assert tuple(r.to_dict()) == REPORT_KEYS
