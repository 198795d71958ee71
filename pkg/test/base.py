"""
Base module for all of the reland tests.

Contains the shared defaults, dataset fixtures, finite-difference helpers and
brute-force oracles.
"""

from dataclasses import replace
import logging
import os
import shutil
import tempfile
import unittest

import numpy as np

from reland.api import RELand
from reland.config import TrainConfig
from reland.dataset import Dataset, SyntheticConfig
from reland._constants import DEFAULT_ENV_FEATURE, DEFAULT_SINGLE_FEATURE

from ._constants import RELAND_TEST_LOG_LEVEL, FD_EPSILON, BOUNDARY_BAND


class TestRELandBaseTestCase(unittest.TestCase):
    """
    Base class for providing common test utilities across reland components.
    It includes fixture generators for small datasets and configs, numerical
    gradient helpers and brute-force oracles used in many tests.
    """

    _unittest_name = "base"
    _component_being_tested = None

    @classmethod
    def setUpClass(cls):
        cls._logger = logging.getLogger(cls.__class__.__name__)
        cls._logger.setLevel(RELAND_TEST_LOG_LEVEL)
        cls._log_level = RELAND_TEST_LOG_LEVEL
        cls._api = RELand(log_level=cls._log_level)
        cls._component = getattr(cls._api, cls._component_being_tested) \
            if cls._component_being_tested else None

    def setUp(self):
        self._tmp_dir = tempfile.mkdtemp(prefix=f"reland_{self._unittest_name}_")

    def tearDown(self):
        shutil.rmtree(self._tmp_dir, ignore_errors=True)

    def _tmp_path(self, name):
        return os.path.join(self._tmp_dir, name)

    # pylint: disable=too-many-arguments,too-many-locals
    @staticmethod
    def _grid_dataset(rows=6, cols=6, n_municipalities=3, seed=0, prefix="C"):
        """
        Small gridded dataset: municipalities are column bands, labels are the
        upper half of a noisy score within each municipality so every
        municipality holds both classes.
        """
        rng = np.random.default_rng(seed)
        n = rows * cols
        row_idx, col_idx = np.divmod(np.arange(n), cols)
        band = np.array_split(np.arange(cols), n_municipalities)
        owner = np.empty(n, dtype=object)
        for index, band_cols in enumerate(band):
            owner[np.isin(col_idx, band_cols)] = f"{prefix}-MUN-{index}"
        informative = rng.standard_normal((n, 2))
        distance = rng.uniform(0.0, 5.0, n)
        events = rng.poisson(0.7, n).astype(np.float64)
        score = informative.sum(axis=1) + 0.3 * rng.standard_normal(n)
        labels = np.zeros(n, dtype=np.int64)
        for name in set(owner):
            members = np.flatnonzero(owner == name)
            labels[members] = score[members] > np.median(score[members])
        features = np.column_stack([informative, distance, events])
        return Dataset(
            [f"{prefix}{r:03d}-{c:03d}" for r, c in zip(row_idx, col_idx)],
            -75.0 + 0.005 * col_idx, 6.0 + 0.0045 * row_idx, owner,
            np.full(n, "Test", dtype=object), features, labels,
            ["f0", "f1", DEFAULT_SINGLE_FEATURE, DEFAULT_ENV_FEATURE], DEFAULT_ENV_FEATURE)

    @staticmethod
    def _fast_config(**overrides):
        """
        A training config small enough for unit tests.
        """
        base = TrainConfig(epochs=4, batch_size=16, base_lr=0.02, steps=2, latent=4)
        return replace(base, **overrides)

    @staticmethod
    def _small_synthetic_config(**overrides):
        base = SyntheticConfig(grid_rows=16, grid_cols=16, n_municipalities=4, d_geo=4)
        return replace(base, **overrides)

    @staticmethod
    def _numeric_gradient(loss, array, eps=FD_EPSILON):
        """
        Central finite differences of ``loss()`` w.r.t. every entry of the live
        ``array``; the array is restored afterwards.
        """
        grad = np.zeros_like(array)
        flat = array.reshape(-1)
        grad_flat = grad.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + eps
            upper = loss()
            flat[index] = original - eps
            lower = loss()
            flat[index] = original
            grad_flat[index] = (upper - lower) / (2.0 * eps)
        return grad

    @staticmethod
    def _relative_error(analytic, numeric):
        analytic = np.asarray(analytic, dtype=np.float64)
        numeric = np.asarray(numeric, dtype=np.float64)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
        return float(np.linalg.norm(analytic - numeric) / scale)

    def assertGradientClose(self, analytic, numeric, tolerance, what=""):
        """
        Relative error between two gradients is below ``tolerance``.
        """
        error = self._relative_error(analytic, numeric)
        self.assertLess(error, tolerance, f"gradient mismatch {what}: relative error {error}")

    @staticmethod
    def _simplex_projection_oracle(z, iterations=200):
        """
        Euclidean projection onto the simplex by bisection on the threshold
        ``tau`` solving ``sum(max(z - tau, 0)) = 1``.
        """
        z = np.asarray(z, dtype=np.float64)
        low, high = z.min() - 1.0, z.max()
        for _ in range(iterations):
            tau = (low + high) / 2.0
            if np.maximum(z - tau, 0.0).sum() > 1.0:
                low = tau
            else:
                high = tau
        return np.maximum(z - (low + high) / 2.0, 0.0)

    @staticmethod
    def _sparsemax_margin(z):
        """
        Distance of the closest entry of ``z`` to the sparsemax threshold.
        """
        z = np.asarray(z, dtype=np.float64).ravel()
        z_sorted = np.sort(z)[::-1]
        cumulative = np.cumsum(z_sorted)
        ks = np.arange(1, z.size + 1)
        k_z = int(np.sum(1.0 + ks * z_sorted > cumulative))
        tau = (cumulative[k_z - 1] - 1.0) / k_z
        return float(np.min(np.abs(z - tau)))

    @staticmethod
    def _away_from_boundary(vectors, band=BOUNDARY_BAND):
        return all(TestRELandBaseTestCase._sparsemax_margin(v) > band for v in vectors)

    @staticmethod
    def _brute_force_ranking(scores, labels):
        """
        O(PN) pair counting: ``(discordant pairs, correctly ordered pairs,
        tied pairs)``.
        """
        pos = [s for s, y in zip(scores, labels) if y == 1]
        neg = [s for s, y in zip(scores, labels) if y == 0]
        discordant = sum(1 for sp in pos for sn in neg if sp <= sn)
        ordered = sum(1 for sp in pos for sn in neg if sp > sn)
        tied = sum(1 for sp in pos for sn in neg if sp == sn)
        return discordant, ordered, tied
