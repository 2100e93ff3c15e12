import math

import numpy as np
from django.test import SimpleTestCase

from readmission.compute import (
    Adam,
    AdamState,
    ConfigurationError,
    GradCheckError,
    RngStream,
    Value,
    adam_step,
    concat,
    dropout,
    grad_check,
    log_softmax,
    masked_softmax,
    parameter,
    stack,
    weighted_bce,
)


class AdamTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameter_unchanged(self):
        param = parameter(np.array([1.5, -2.0]))
        state = AdamState.zeros_like(param.data)
        adam_step(param, np.zeros(2), state, lr=0.01)
        np.testing.assert_array_equal(param.data, [1.5, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        param = parameter(np.array(0.0))
        state = AdamState.zeros_like(param.data)
        adam_step(param, np.array(1.0), state, lr=0.001)
        self.assertAlmostEqual(float(param.data), -0.001, places=8)
        self.assertEqual(state.t, 1)

    def test_shape_mismatch_is_a_configuration_error(self):
        param = parameter(np.zeros(3))
        with self.assertRaises(ConfigurationError):
            adam_step(param, np.zeros(2), AdamState.zeros_like(param.data), lr=0.1)

    def test_optimiser_minimises_a_quadratic(self):
        w = parameter(np.array([3.0, -4.0]), "w")
        optimiser = Adam({"w": w}, lr=0.1)
        for _ in range(300):
            optimiser.zero_grad()
            (w * w).sum().backward()
            optimiser.step()
        self.assertLess(np.abs(w.data).max(), 0.05)


class DropoutTests(SimpleTestCase):
    def test_zero_probability_is_identity(self):
        x = np.arange(6.0)
        self.assertIs(dropout(x, 0.0, True, RngStream(1)), x)

    def test_eval_mode_is_identity(self):
        x = Value(np.ones(4))
        self.assertIs(dropout(x, 0.5, False, None), x)

    def test_zero_fraction_matches_probability(self):
        out = dropout(Value(np.ones(100_000)), 0.5, True, RngStream(7))
        zeros = float((out.data == 0).mean())
        self.assertAlmostEqual(zeros, 0.5, delta=0.01)
        self.assertTrue(np.all((out.data == 0) | (out.data == 2.0)))

    def test_probability_one_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            dropout(np.ones(3), 1.0, True, RngStream(0))


class WeightedBceTests(SimpleTestCase):
    def test_symmetric_point(self):
        self.assertAlmostEqual(float(weighted_bce(0.5, 1).data), math.log(2), places=6)

    def test_weight_touches_positives_only(self):
        self.assertAlmostEqual(float(weighted_bce(0.5, 0, w_pos=5.0).data), math.log(2), places=6)
        self.assertAlmostEqual(float(weighted_bce(0.5, 1, w_pos=2.0).data), 2 * math.log(2), places=6)

    def test_extreme_predictions_stay_finite(self):
        loss = weighted_bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        self.assertTrue(np.all(np.isfinite(loss.data)))


class GraphTests(SimpleTestCase):
    def test_broadcast_gradients_are_summed(self):
        a = parameter(np.ones((3, 2)))
        b = parameter(np.array([1.0, 2.0]))
        (a * b).sum().backward()
        np.testing.assert_allclose(b.grad, [3.0, 3.0])
        np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0], (3, 1)))

    def test_repeated_index_accumulates(self):
        table = parameter(np.zeros((3, 2)))
        table[np.array([1, 1, 2])].sum().backward()
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [1, 1]])

    def test_ndarray_on_the_left_dispatches_to_value(self):
        x = parameter(np.array([1.0, 2.0]))
        out = np.array([3.0, 4.0]) * x
        self.assertIsInstance(out, Value)

    def test_fully_masked_softmax_row_is_zero(self):
        scores = Value(np.array([[1.0, 2.0], [3.0, 4.0]]))
        weights = masked_softmax(scores, np.array([[True, True], [False, False]]))
        self.assertAlmostEqual(float(weights.data[0].sum()), 1.0, places=12)
        np.testing.assert_array_equal(weights.data[1], [0.0, 0.0])

    def test_log_softmax_normalises(self):
        out = log_softmax(Value(np.array([[1.0, 2.0, 3.0]])), axis=1)
        self.assertAlmostEqual(float(np.exp(out.data).sum()), 1.0, places=12)


class GradCheckTests(SimpleTestCase):
    def test_square(self):
        w = parameter(np.array(3.0), "w")
        report = grad_check(lambda: w * w, {"w": w}, tolerance=1e-7)
        self.assertTrue(report.passed)
        w.grad = None
        (w * w).backward()
        self.assertAlmostEqual(float(w.grad), 6.0, places=7)

    def test_logistic_regression_loss(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=4)
        w = parameter(rng.normal(size=4), "w")
        b = parameter(np.array(0.1), "b")
        loss = lambda: weighted_bce((Value(x) @ w + b).sigmoid(), 1.0, w_pos=3.0)  # noqa: E731
        report = grad_check(loss, {"w": w, "b": b})
        self.assertTrue(report.passed, report.errors)

    def test_elementwise_primitives(self):
        rng = np.random.default_rng(1)
        a = parameter(rng.uniform(0.5, 1.5, (2, 3)), "a")
        b = parameter(rng.normal(size=(3, 2)), "b")
        c = parameter(rng.normal(size=3), "c")
        weights = rng.normal(size=(2, 2))

        def loss():
            mixed = concat([a.log() * c, (a / 2.0).tanh() ** 2.0], axis=0)
            stacked = stack([c.softplus(), c.exp() * 0.1], axis=0)
            return ((a @ b) * weights).sum() + mixed.mean() + (stacked @ b).sum() * 0.1

        report = grad_check(loss, {"a": a, "b": b, "c": c})
        self.assertTrue(report.passed, report.errors)

    def test_masked_softmax_gradient(self):
        scores = parameter(np.random.default_rng(2).normal(size=(3, 4)), "scores")
        mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=bool)
        target = np.random.default_rng(3).normal(size=(3, 4))
        report = grad_check(lambda: (masked_softmax(scores, mask) * target).sum(), {"scores": scores})
        self.assertTrue(report.passed, report.errors)

    def test_dropped_small_gradient_fails(self):
        w = parameter(np.array(0.7), "w")
        scale = 5e-9
        dropped = lambda: Value.from_op(w.data * scale, (w,), lambda grad: (np.zeros_like(grad),))  # noqa: E731
        report = grad_check(dropped, {"w": w}, tolerance=1e-4)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.errors["w"], 0.5, places=6)
        self.assertTrue(grad_check(lambda: w * scale, {"w": w}, tolerance=1e-6).passed)

    def test_non_scalar_output_is_rejected(self):
        w = parameter(np.ones(2), "w")
        with self.assertRaises(ConfigurationError):
            grad_check(lambda: w * 2.0, {"w": w})

    def test_non_finite_output_reports_location(self):
        w = parameter(np.array(0.0), "w")
        with self.assertRaises(GradCheckError) as caught:
            grad_check(lambda: w.log(), {"w": w})
        self.assertIn("unperturbed", str(caught.exception))


class RngStreamTests(SimpleTestCase):
    def test_same_seed_replays(self):
        np.testing.assert_array_equal(RngStream(5).normal(10), RngStream(5).normal(10))

    def test_spawned_streams_differ(self):
        root = RngStream(5)
        self.assertFalse(np.array_equal(root.spawn(1).random(5), root.spawn(2).random(5)))
