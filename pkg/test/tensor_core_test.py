"""
Module for testing the dense numerical kernel.
"""

import numpy as np
import timeout_decorator

from reland.exceptions import DimensionError, DomainError, OptimizerError
from reland.tensor_core import \
    AdamState, BatchNormLayer, DenseLayer, adam_step, bn_backward, bn_forward, dense_backward, \
    dense_forward, relu, relu_backward, sigmoid, sigmoid_backward, sparsemax, sparsemax_backward

from .base import TestRELandBaseTestCase
from ._constants import GRAD_REL_TOL, MAX_TEST_TIMEOUT


class TestRELandTensorCore(TestRELandBaseTestCase):
    """
    Class for testing layers, SparseMax and Adam.
    """

    _unittest_name = "tcore"

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_sparsemax_matches_projection_oracle(self):
        """
        SparseMax equals the brute-force simplex projection and is a simplex
        point, idempotent and shift invariant.
        """
        rng = np.random.default_rng(7)
        for _ in range(1000):
            d = int(rng.integers(2, 11))
            z = rng.normal(scale=rng.uniform(0.1, 3.0), size=d)
            projected = sparsemax(z)
            np.testing.assert_allclose(projected, self._simplex_projection_oracle(z), atol=1e-6)
            self.assertTrue(np.all(projected >= 0))
            self.assertAlmostEqual(projected.sum(), 1.0, places=12)
            np.testing.assert_allclose(sparsemax(projected), projected, atol=1e-12)
            np.testing.assert_allclose(sparsemax(z + rng.normal()), projected, atol=1e-12)

    def test_sparsemax_rows_and_errors(self):
        """
        Batches are projected row by row; non-finite input is rejected.
        """
        batch = np.array([[3.0, 1.0, 0.0], [0.1, 0.2, 0.3]])
        np.testing.assert_allclose(sparsemax(batch)[0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(sparsemax(batch)[1], sparsemax(batch[1]))
        np.testing.assert_allclose(sparsemax(np.zeros(4)), np.full(4, 0.25))
        with self.assertRaises(DomainError):
            sparsemax(np.array([0.0, np.nan]))
        with self.assertRaises(DomainError):
            sparsemax(np.array([np.inf, 1.0]))

    def test_sparsemax_backward(self):
        """
        The Jacobian-vector product matches finite differences.
        """
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 20:
            z = rng.normal(size=6)
            if not self._away_from_boundary([z], band=1e-4):
                continue
            upstream = rng.normal(size=6)
            analytic = sparsemax_backward(sparsemax(z), upstream)
            numeric = self._numeric_gradient(lambda z=z: float(upstream @ sparsemax(z)), z)
            self.assertGradientClose(analytic, numeric, GRAD_REL_TOL, "sparsemax")
            checked += 1

    def test_dense_backward(self):
        """
        Dense layer gradients match finite differences.
        """
        rng = np.random.default_rng(1)
        layer = DenseLayer.initialize(5, 3, rng)
        x = rng.normal(size=(7, 5))
        upstream = rng.normal(size=(7, 3))

        def loss():
            return float(np.sum(upstream * dense_forward(layer, x)))

        grad_x, grad_w, grad_b = dense_backward(layer, x, upstream)
        self.assertGradientClose(grad_x, self._numeric_gradient(loss, x), GRAD_REL_TOL, "x")
        self.assertGradientClose(grad_w, self._numeric_gradient(loss, layer.weights),
                                 GRAD_REL_TOL, "weights")
        self.assertGradientClose(grad_b, self._numeric_gradient(loss, layer.bias),
                                 GRAD_REL_TOL, "bias")
        with self.assertRaises(DimensionError):
            dense_forward(layer, np.zeros((2, 4)))

    def test_batch_norm_backward(self):
        """
        Training and inference batch norm gradients match finite differences.
        """
        rng = np.random.default_rng(2)
        layer = BatchNormLayer.initialize(4)
        layer.scale[:] = rng.uniform(0.5, 2.0, 4)
        layer.shift[:] = rng.normal(size=4)
        layer.running_mean[:] = rng.normal(size=4)
        layer.running_var[:] = rng.uniform(0.5, 2.0, 4)
        x = rng.normal(size=(9, 4))
        upstream = rng.normal(size=(9, 4))
        for training in (True, False):
            def loss(training=training):
                out, _ = bn_forward(layer, x, training, update_running=False)
                return float(np.sum(upstream * out))

            _, cache = bn_forward(layer, x, training, update_running=False)
            grad_x, grad_scale, grad_shift = bn_backward(layer, cache, upstream)
            self.assertGradientClose(grad_x, self._numeric_gradient(loss, x), GRAD_REL_TOL,
                                     f"bn x (training={training})")
            self.assertGradientClose(grad_scale, self._numeric_gradient(loss, layer.scale),
                                     GRAD_REL_TOL, "bn scale")
            self.assertGradientClose(grad_shift, self._numeric_gradient(loss, layer.shift),
                                     GRAD_REL_TOL, "bn shift")

    def test_batch_norm_running_statistics(self):
        """
        Running mean/variance follow the momentum update with the unbiased
        batch variance; inference output ignores batch composition.
        """
        layer = BatchNormLayer.initialize(2)
        x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 10.0]])
        bn_forward(layer, x, training=True)
        np.testing.assert_allclose(layer.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(layer.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))

        full, _ = bn_forward(layer, x, training=False)
        part, _ = bn_forward(layer, x[:1], training=False)
        np.testing.assert_array_equal(full[:1], part)

        with self.assertRaises(DomainError):
            bn_forward(layer, x[:1], training=True)

    def test_activations(self):
        """
        ReLU and sigmoid with their backward passes.
        """
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(relu(x), [0.0, 0.0, 3.0])
        np.testing.assert_array_equal(relu_backward(x, np.ones(3)), [0.0, 0.0, 1.0])
        y = sigmoid(np.array([0.0, 800.0, -800.0]))
        np.testing.assert_allclose(y, [0.5, 1.0, 0.0])
        self.assertTrue(np.all(np.isfinite(y)))
        np.testing.assert_allclose(sigmoid_backward(np.array([0.5]), np.array([2.0])), [0.5])

    def test_adam_step(self):
        """
        The first step moves each weight by about ``lr`` against the gradient
        sign, plus decoupled weight decay.
        """
        state = AdamState(base_lr=0.1, weight_decay=0.01)
        params = {"w": np.array([1.0, -1.0])}
        adam_step(state, params, {"w": np.array([0.5, -0.25])}, epoch=0)
        expected = np.array([1.0, -1.0]) - 0.1 * (
            np.array([0.5, -0.25]) / (np.abs([0.5, -0.25]) + 1e-8) + 0.01 * np.array([1.0, -1.0]))
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
        self.assertEqual(state.step, 1)

    def test_adam_schedule_and_errors(self):
        """
        Step decay of the learning rate; non-finite gradients move nothing.
        """
        state = AdamState(base_lr=0.01, decay_factor=0.1, decay_every=75)
        self.assertEqual(state.learning_rate(74), 0.01)
        self.assertAlmostEqual(state.learning_rate(75), 0.001)
        self.assertAlmostEqual(state.learning_rate(150), 0.0001)

        params = {"a": np.array([1.0]), "b": np.array([2.0])}
        with self.assertRaises(OptimizerError):
            adam_step(state, params, {"a": np.array([0.1]), "b": np.array([np.nan])}, epoch=0)
        np.testing.assert_array_equal(params["a"], [1.0])
        self.assertEqual(state.step, 0)
        with self.assertRaises(DimensionError):
            adam_step(state, params, {"a": np.zeros(2)}, epoch=0)
