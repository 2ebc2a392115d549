import math

import numpy as np
import pytest

from reliable_fel import autograd as ag
from reliable_fel.autograd import Tensor
from reliable_fel.exceptions import ConfigError, ContractError, NumericError, ShapeError
from reliable_fel.gradcheck import gradient_errors, grouped_gradient_errors, numerical_gradient
from reliable_fel.losses import (LossWeights, anchor_loss, center_loss, class_distribution_loss,
                                 total_loss)

from .toy import toy_graph


def mean_pair_distance(a):
    flat = a.reshape(-1, a.shape[-1])
    d = [np.sum((flat[i] - flat[j]) ** 2) for i in range(len(flat)) for j in range(i + 1, len(flat))]
    return float(np.mean(d))


class TestClassLoss:
    def test_perfect_prediction(self):
        y = np.eye(3)
        assert class_distribution_loss(y, y).item() == 0.0

    def test_half_probability(self):
        loss = class_distribution_loss([[0.5, 0.5]], [[1.0, 0.0]])
        assert loss.item() == pytest.approx(math.log(2), rel=1e-15)

    def test_batch_is_mean_of_samples(self):
        L = np.array([[0.5, 0.5], [0.2, 0.8]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        expected = (-math.log(0.5) - math.log(0.8)) / 2
        assert class_distribution_loss(L, y).item() == pytest.approx(expected, rel=1e-15)

    def test_zero_probability_is_floored(self):
        assert class_distribution_loss([[0.0, 1.0]], [[1.0, 0.0]]).item() == pytest.approx(
            -math.log(1e-12))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            class_distribution_loss(np.ones((2, 3)) / 3, np.eye(2))

    def test_nonnegative(self, rng):
        for _ in range(50):
            L = rng.dirichlet(np.ones(4), 6)
            y = rng.dirichlet(np.ones(4), 6)
            assert class_distribution_loss(L, y).item() >= 0.0


class TestAnchorLoss:
    def test_identical_anchors(self):
        assert anchor_loss(np.ones((2, 3, 4))).item() == 0.0

    def test_two_anchors_distance_two(self):
        assert anchor_loss(np.array([[[0.0, 0.0]], [[2.0, 0.0]]])).item() == pytest.approx(-4.0)

    def test_matches_pairwise_mean(self, rng):
        a = rng.standard_normal((3, 2, 5))
        assert anchor_loss(a).item() == pytest.approx(-mean_pair_distance(a), rel=1e-12)

    def test_homogeneous_of_degree_two(self, rng):
        a = rng.standard_normal((4, 2, 3))
        assert anchor_loss(2 * a).item() == pytest.approx(4 * anchor_loss(a).item(), rel=1e-12)

    def test_single_anchor_has_no_pairs(self):
        assert anchor_loss(np.ones((1, 1, 3))).item() == 0.0

    def test_nonpositive(self, rng):
        for _ in range(20):
            assert anchor_loss(rng.standard_normal((3, 2, 4))).item() <= 0.0

    def test_step_spreads_anchors(self, rng):
        a = Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
        before = mean_pair_distance(a.data)
        grad = ag.backward(anchor_loss(a))[a]
        assert mean_pair_distance(a.data - 1e-3 * grad) > before


class TestCenterLoss:
    def test_on_anchor(self):
        anchors = np.array([[[1.0, 2.0], [5.0, 5.0]], [[0.0, 0.0], [9.0, 9.0]]])
        assert center_loss([[1.0, 2.0]], [0], anchors).item() == 0.0

    def test_nearest_of_three_and_five(self):
        anchors = np.array([[[3.0, 0.0], [0.0, 5.0]], [[0.1, 0.0], [0.0, 0.1]]])
        assert center_loss([[0.0, 0.0]], [0], anchors).item() == pytest.approx(9.0)

    def test_extra_far_anchor_never_increases(self, rng):
        for _ in range(20):
            e, anchors = rng.standard_normal((4, 3)), rng.standard_normal((2, 2, 3))
            labels = rng.integers(0, 2, 4)
            extra = np.concatenate([anchors, rng.standard_normal((2, 1, 3)) * 10], axis=1)
            assert center_loss(e, labels, extra).item() <= center_loss(e, labels, anchors).item()

    def test_tie_routes_gradient_to_first_anchor(self):
        anchors = Tensor(np.array([[[1.0, 0.0], [-1.0, 0.0]]]), requires_grad=True)
        g = ag.backward(center_loss(np.zeros((1, 2)), [0], anchors))[anchors]
        np.testing.assert_allclose(g[0, 0], [2.0, 0.0])
        np.testing.assert_array_equal(g[0, 1], [0.0, 0.0])

    def test_step_pulls_embedding_to_anchor(self, rng):
        e = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        anchors = rng.standard_normal((2, 3, 3))
        labels = rng.integers(0, 2, 5)

        def nearest(x):
            d = ((anchors[labels] - x[:, None]) ** 2).sum(-1)
            return d.min(axis=1)

        before = nearest(e.data)
        grad = ag.backward(center_loss(e, labels, anchors))[e]
        assert np.all(nearest(e.data - 1e-3 * grad) < before)

    def test_label_range(self):
        with pytest.raises(ContractError):
            center_loss(np.zeros((1, 2)), [3], np.zeros((2, 1, 2)))
        with pytest.raises(ShapeError):
            center_loss(np.zeros((2, 2)), [0], np.zeros((2, 1, 2)))


class TestTotalLoss:
    parts = {"cls": 2.0, "anchor": -3.0, "center": 5.0}

    def test_classification_only(self):
        assert total_loss(self.parts, LossWeights(1, 0, 0)).item() == 2.0

    def test_unit_weights_sum(self):
        assert total_loss(self.parts, LossWeights()).item() == 4.0

    def test_linear_in_each_weight(self):
        base = total_loss(self.parts, LossWeights(1, 1, 1)).item()
        doubled = total_loss(self.parts, LossWeights(1, 1, 2)).item()
        assert doubled - base == 5.0

    def test_non_finite_part(self):
        with pytest.raises(NumericError):
            total_loss({"cls": float("nan")})

    @pytest.mark.parametrize("w", [(-1, 1, 1), (0, 0, 0)])
    def test_weight_validation(self, w):
        with pytest.raises(ConfigError):
            LossWeights(*w)


@pytest.mark.parametrize("seed", range(10))
def test_total_loss_gradient_on_toy_graph(seed):
    fn, groups = toy_graph(seed)
    errs = grouped_gradient_errors(fn, groups)
    assert set(errs) == {"encoder", "head", "corrector", "anchors"}
    assert max(errs.values()) <= 1e-4, errs


def test_tiny_attention_gradient_is_rounding_not_error():
    # seed 6 leaves the corrector's query weights with a gradient of norm ~1e-8, where
    # a 1e-5 central difference is mostly rounding; larger steps converge on the
    # analytic value
    fn, groups = toy_graph(6)
    w_q = next(p for p in groups["corrector"] if p.name == "corrector.attn.w_q.weight")
    analytic = ag.backward(fn())[w_q]
    gaps = [np.linalg.norm(analytic - numerical_gradient(fn, w_q, h)) for h in (1e-5, 1e-3)]
    assert np.linalg.norm(analytic) < 1e-6
    assert gaps[1] < gaps[0] and gaps[1] < 1e-3 * np.linalg.norm(analytic)


def test_per_tensor_gradients_on_toy_graph():
    fn, groups = toy_graph(0)
    errs = gradient_errors(fn, [p for g in groups.values() for p in g])
    assert max(errs.values()) <= 1e-4, errs
