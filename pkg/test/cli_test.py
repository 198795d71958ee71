"""
Module for testing the ``reland`` command line end to end.
"""

import contextlib
import filecmp
import io
import json

import geojson
import pandas as pd
import timeout_decorator

from reland.cli import main

from .base import TestRELandBaseTestCase
from ._constants import MAX_TEST_TIMEOUT

_CONFIG_TEXT = """\
synthetic:
  grid_rows: 12
  grid_cols: 12
  n_municipalities: 3
  d_geo: 3
  positive_rate: 0.3
train:
  epochs: 3
  batch_size: 32
  latent: 4
"""


class TestRELandCli(TestRELandBaseTestCase):
    """
    Class for testing the command line entry point.
    """

    _unittest_name = "cli"

    def _run(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(list(argv) + ["--log-level", "CRITICAL"])
        return code, stdout.getvalue(), stderr.getvalue()

    def _generate(self):
        config = self._tmp_path("run.yaml")
        with open(config, "w", encoding="utf-8") as config_file:
            config_file.write(_CONFIG_TEXT)
        data = self._tmp_path("data.csv")
        code, _, stderr = self._run("gen", "--config", config, "--out", data, "--seed", "1")
        self.assertEqual(code, 0, stderr)
        return config, data

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_train_eval_importance_riskmap(self):
        """
        A generated dataset goes through training, evaluation, importance and
        map export; training twice gives the same bytes.
        """
        config, data = self._generate()
        first, second = self._tmp_path("a.json"), self._tmp_path("b.json")
        for out in (first, second):
            code, _, stderr = self._run("train", "--data", data, "--config", config,
                                        "--out", out)
            self.assertEqual(code, 0, stderr)
        self.assertTrue(filecmp.cmp(first, second, shallow=False))

        report = self._tmp_path("eval.json")
        code, _, stderr = self._run("eval", "--ckpt", first, "--data", data, "--report", report)
        self.assertEqual(code, 0, stderr)
        with open(report, "r", encoding="utf-8") as report_file:
            document = json.load(report_file)
        self.assertEqual(document["model_kind"], "reland")
        self.assertEqual(document["n_cells"], 144)
        self.assertIn("roc_auc", document["metrics"])

        importance = self._tmp_path("importance.csv")
        code, _, stderr = self._run("importance", "--ckpt", first, "--data", data,
                                    "--out", importance)
        self.assertEqual(code, 0, stderr)
        frame = pd.read_csv(importance)
        self.assertEqual(list(frame.columns), ["feature", "importance"])
        self.assertEqual(len(frame), 5)
        self.assertAlmostEqual(frame["importance"].sum(), 1.0, delta=1e-9)

        riskmap, page = self._tmp_path("map.geojson"), self._tmp_path("map.html")
        code, _, stderr = self._run("riskmap", "--ckpt", first, "--data", data, "--out", riskmap,
                                    "--moran", "--perms", "99", "--html", page)
        self.assertEqual(code, 0, stderr)
        with open(riskmap, "r", encoding="utf-8") as geojson_file:
            collection = geojson.load(geojson_file)
        self.assertTrue(collection.is_valid)
        self.assertEqual(len(collection["features"]), 144)
        self.assertIsNotNone(collection["features"][0]["properties"]["cluster_class"])
        with open(page, "r", encoding="utf-8") as html_file:
            self.assertIn("riskmap-data", html_file.read())

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_block_cv(self):
        """
        blockCV writes one fold per municipality and prints the table.
        """
        config, data = self._generate()
        report = self._tmp_path("cv.json")
        code, stdout, stderr = self._run("cv", "--protocol", "blockcv", "--data", data,
                                         "--config", config, "--model", "lr",
                                         "--report", report)
        self.assertEqual(code, 0, stderr)
        with open(report, "r", encoding="utf-8") as report_file:
            document = json.load(report_file)
        self.assertEqual(document["protocol"], "blockcv")
        self.assertEqual(len(document["folds"]), 3)
        self.assertTrue(document["optimistic_selection"])
        self.assertIn("mean (std)", stdout)

    @timeout_decorator.timeout(MAX_TEST_TIMEOUT)
    def test_transfer_cv_to_stdout(self):
        """
        transferCV without a checkpoint trains one on region A first; ``-``
        sends the report to stdout.
        """
        region_a, region_b = self._tmp_path("a.csv"), self._tmp_path("b.csv")
        self._api.datasets.save_csv(self._grid_dataset(prefix="A"), region_a)
        self._api.datasets.save_csv(self._grid_dataset(prefix="B", seed=1), region_b)
        code, stdout, stderr = self._run(
            "cv", "--protocol", "transfercv", "--data-a", region_a, "--data-b", region_b,
            "--model", "mlp", "--epochs", "2", "--fine-tune-epochs", "1", "--report", "-",
            "--jobs", "2")
        self.assertEqual(code, 0, stderr)
        document = json.loads(stdout)
        self.assertEqual(document["protocol"], "transfercv")
        self.assertEqual([fold["fold_id"] for fold in document["folds"]],
                         ["B-MUN-0", "B-MUN-1", "B-MUN-2"])

    def test_exit_codes(self):
        """
        Validation errors exit with 1, runtime and I/O errors with 2, each
        with a one-line diagnostic.
        """
        code, _, stderr = self._run("eval", "--ckpt", self._tmp_path("missing.json"),
                                    "--data", self._tmp_path("missing.csv"), "--report", "-")
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith("ERROR io:"))

        bad = self._tmp_path("bad.csv")
        with open(bad, "w", encoding="utf-8") as bad_file:
            bad_file.write("cell_id,lon\nA,1\n")
        code, _, stderr = self._run("train", "--data", bad, "--out", self._tmp_path("c.json"))
        self.assertEqual(code, 1)
        self.assertTrue(stderr.startswith("ERROR schema:"))
        self.assertEqual(len(stderr.strip().splitlines()), 1)

        code, _, stderr = self._run("cv", "--report", "-")
        self.assertEqual(code, 1)
        self.assertTrue(stderr.startswith("ERROR usage:"))

        code, _, stderr = self._run("cv", "--protocol", "blockv", "--report", "-")
        self.assertEqual(code, 1)
        self.assertIn("--data-a", stderr)
