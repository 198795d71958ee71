"""
Module for testing the training loop, objectives and importance reporting.
"""

from dataclasses import replace
import unittest

import numpy as np
import timeout_decorator

from reland._constants import ModelKind, Objective
from reland.config import IrmConfig, PushConfig
from reland.exceptions import DomainError, LeakageError, SchemaError
from reland.models import LrModel
from reland.trainer import minibatches, objective_and_grad

from .base import TestRELandBaseTestCase
from ._constants import GRAD_REL_TOL, MAX_TEST_TIMEOUT, RUN_SLOW_TESTS, SLOW_TEST_TIMEOUT


class TestRELandTrainer(TestRELandBaseTestCase):
    """
    Class for testing the trainer component.
    """

    _unittest_name = "train"
    _component_being_tested = "trainer"

    def test_minibatches(self):
        """
        A trailing single sample joins the previous batch.
        """
        sizes = [len(batch) for batch in minibatches(np.arange(33), 16)]
        self.assertEqual(sizes, [16, 17])
        sizes = [len(batch) for batch in minibatches(np.arange(34), 16)]
        self.assertEqual(sizes, [16, 16, 2])

    def _check_objective_gradient(self, config):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(24, 3))
        labels = rng.integers(0, 2, 24).astype(np.float64)
        labels[:2] = [0.0, 1.0]
        hard = rng.random(24) < 0.3
        model = LrModel(3, rng=np.random.default_rng(1))

        def loss():
            return objective_and_grad(model.forward(x), labels, hard, config)[0]

        _, grad_logits = objective_and_grad(model.forward(x), labels, hard, config)
        grads = model.backward(grad_logits)
        for name, param in model.parameters().items():
            self.assertGradientClose(grads[name], self._numeric_gradient(loss, param),
                                     GRAD_REL_TOL, f"{config.objective.value} {name}")

    def test_composite_objective_gradients(self):
        """
        ERM+IRM and pushed objectives backpropagate correctly.
        """
        base = self._fast_config()
        for lambda_ in (0.1, 1.0, 10.0):
            self._check_objective_gradient(
                replace(base, objective=Objective.IRM, irm=IrmConfig(lambda_=lambda_)))
        for p in (2.0, 4.0):
            self._check_objective_gradient(
                replace(base, objective=Objective.PUSHED, push=PushConfig(p=p)))
        self._check_objective_gradient(replace(base, objective=Objective.IRM_PUSHED))

    def test_train_metadata(self):
        """
        The checkpoint records the selected epoch and the run settings.
        """
        dataset = self._grid_dataset()
        config = self._fast_config(epochs=3, seed=4)
        checkpoint = self._component.train(ModelKind.RELAND, dataset, config)
        training = checkpoint.training
        self.assertIn(training["best_epoch"], range(3))
        self.assertEqual(training["epochs"], 3)
        self.assertEqual(training["seed"], 4)
        self.assertEqual(training["train_cells"] + training["val_cells"], len(dataset))
        self.assertIsNotNone(checkpoint.model.frozen_mask)
        scores = self._component.score(checkpoint, dataset)
        self.assertTrue(np.all((scores > 0) & (scores < 1)))
        report = self._component.evaluate(checkpoint, dataset)
        self.assertEqual(report.n_pos + report.n_neg, len(dataset))

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_determinism(self):
        """
        Equal seeds give byte-identical checkpoints.
        """
        dataset = self._grid_dataset()
        config = self._fast_config(objective=Objective.IRM, seed=1)
        first = self._component.train(ModelKind.RELAND, dataset, config)
        second = self._component.train(ModelKind.RELAND, dataset, config)
        self.assertEqual(first.to_json(), second.to_json())

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_irm_with_zero_weight_is_erm(self):
        """
        IRM with ``lambda = 0`` trains exactly like ERM.
        """
        dataset = self._grid_dataset()
        erm = self._component.train(ModelKind.RELAND, dataset, self._fast_config(seed=2))
        irm = self._component.train(
            ModelKind.RELAND, dataset,
            self._fast_config(seed=2, objective=Objective.IRM, irm=IrmConfig(lambda_=0.0)))
        for name, value in erm.model.parameters().items():
            np.testing.assert_array_equal(irm.model.parameters()[name], value)
        np.testing.assert_array_equal(irm.score(dataset), erm.score(dataset))

    def test_explicit_validation_and_leakage(self):
        """
        Forbidden cells may not reach training or selection data.
        """
        dataset = self._grid_dataset()
        train_ds = dataset.subset(np.arange(24))
        val_ds = dataset.subset(np.arange(24, 36))
        checkpoint = self._component.train(ModelKind.LR, train_ds, self._fast_config(),
                                           val_ds=val_ds, forbidden_cells=["nowhere"])
        self.assertEqual(checkpoint.training["val_cells"], 12)
        with self.assertRaises(LeakageError):
            self._component.train(ModelKind.LR, train_ds, self._fast_config(), val_ds=val_ds,
                                  forbidden_cells=[val_ds.cell_ids[0]])
        with self.assertRaises(LeakageError):
            self._component.train(ModelKind.LR, train_ds, self._fast_config(),
                                  forbidden_cells=[train_ds.cell_ids[5]])

    def test_fine_tune(self):
        """
        Zero fine-tune epochs return an unchanged copy; more epochs move the
        weights but keep the standardization.
        """
        dataset = self._grid_dataset()
        checkpoint = self._component.train(ModelKind.MLP, dataset, self._fast_config())
        unchanged = self._component.fine_tune(checkpoint, dataset, self._fast_config(), epochs=0)
        np.testing.assert_array_equal(unchanged.score(dataset), checkpoint.score(dataset))
        self.assertIsNot(unchanged.model, checkpoint.model)
        tuned = self._component.fine_tune(checkpoint, dataset, self._fast_config(base_lr=0.05),
                                          epochs=2)
        np.testing.assert_array_equal(tuned.mean, checkpoint.mean)
        self.assertEqual(tuned.training["epochs"], 2)

    def test_invalid_training_requests(self):
        """
        Single-class data, missing baseline features and importance of
        non-RELand models are rejected.
        """
        dataset = self._grid_dataset()
        single_class = dataset.subset(np.flatnonzero(dataset.labels == 1))
        with self.assertRaises(DomainError):
            self._component.train(ModelKind.LR, single_class, self._fast_config())
        with self.assertRaises(SchemaError):
            self._component.train(ModelKind.LR_SINGLE, dataset,
                                  self._fast_config(feature="missing"))
        checkpoint = self._component.train(ModelKind.LR, dataset, self._fast_config(epochs=1))
        with self.assertRaises(DomainError):
            self._component.importance(checkpoint, dataset)

    def test_importance(self):
        """
        Importance of a trained RELand checkpoint is a distribution over the
        features.
        """
        dataset = self._grid_dataset()
        checkpoint = self._component.train(ModelKind.RELAND, dataset, self._fast_config())
        for per_sample in (False, True):
            report = self._component.importance(checkpoint, dataset, per_sample=per_sample)
            self.assertEqual(report.importance.shape, (len(dataset.feature_names),))
            self.assertTrue(np.all(report.importance >= 0))
            self.assertAlmostEqual(report.importance.sum(), 1.0, delta=1e-9)

    @unittest.skipUnless(RUN_SLOW_TESTS, "set RELAND_RUN_SLOW_TESTS to run")
    @timeout_decorator.timeout(SLOW_TEST_TIMEOUT)
    def test_importance_recovers_informative_features(self):
        """
        When labels depend only on two features, those two receive most of the
        importance.
        """
        shares = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            base = self._grid_dataset(rows=30, cols=30, n_municipalities=3, seed=seed)
            features = np.array(base.features)
            features[:, 2] = rng.normal(size=len(base))
            labels = (features[:, 0] + features[:, 1] > 1.0).astype(np.int64)
            dataset = type(base)(base.cell_ids, base.lon, base.lat, base.municipality,
                                 base.department, features, labels, base.feature_names,
                                 base.env_feature)
            config = self._fast_config(epochs=60, batch_size=128, steps=1, latent=8, seed=seed)
            checkpoint = self._component.train(ModelKind.RELAND, dataset, config)
            importance = self._component.importance(checkpoint, dataset).importance
            shares.append(importance[0] + importance[1])
        self.assertGreaterEqual(float(np.mean(shares)), 0.6)
