"""
Module for the spatial validation protocols: leave-one-municipality-out
cross-validation (blockCV), train-on-region-A/test-on-region-B (blockV) and
fine-tuning transfer across municipalities of region B (transferCV).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import json
import time

import numpy as np
from sklearn.model_selection import LeaveOneGroupOut
from tabulate import tabulate

from ._constants import DEFAULT_FINE_TUNE_LR, REPORT_FORMAT_VERSION, ModelKind, Protocol
from .component import RELandComponent
from .dataset import RELandDatasets, environment_tags
from .exceptions import ConfigError, DomainError, SchemaError
from .metrics import MetricReport, evaluate, roc_auc
from .trainer import RELandTrainer

METRIC_FIELDS = ("roc_auc", "pr_auc", "mean_height", "mean_rheight")
_TABLE_HEADERS = ["Fold", "Cells", "Imbalance %", "ROC (↑)", "PR (↑)", "Height (↓)",
                  "rHeight (↓)"]


# pylint: disable=too-many-instance-attributes
@dataclass
class FoldResult:
    """
    Result of one validation fold. ``metrics`` is ``None`` and ``available``
    is ``False`` when the fold's validation cells hold a single class, or when
    its training data could not be fit, in which case ``error`` names the
    error category.
    """

    fold_id: str
    metrics: MetricReport = None
    best_epoch: int = None
    seconds: float = 0.0
    imbalance_pct: float = 0.0
    n_cells: int = 0
    hard_roc_auc: float = None
    available: bool = True
    error: str = None

    def to_dict(self, include_timing=False):
        """Plain dict for JSON reports."""
        values = {
            "fold_id": self.fold_id,
            "available": self.available,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "best_epoch": self.best_epoch,
            "imbalance_pct": self.imbalance_pct,
            "n_cells": self.n_cells,
            "hard_roc_auc": self.hard_roc_auc,
            "error": self.error,
        }
        if include_timing:
            values["seconds"] = self.seconds
        return values

    @classmethod
    def from_dict(cls, values):
        """Inverse of :meth:`to_dict`."""
        metrics = values.get("metrics")
        return cls(
            fold_id=values["fold_id"],
            metrics=None if metrics is None else MetricReport.from_dict(metrics),
            best_epoch=values.get("best_epoch"),
            seconds=values.get("seconds", 0.0),
            imbalance_pct=values.get("imbalance_pct", 0.0),
            n_cells=values.get("n_cells", 0),
            hard_roc_auc=values.get("hard_roc_auc"),
            available=values.get("available", metrics is not None),
            error=values.get("error"),
        )


@dataclass
class ProtocolReport:
    """
    Per-fold results of one protocol run. Mean and standard deviation are
    always recomputed from the available folds.
    """

    protocol: Protocol
    folds: list
    model_kind: str = None
    objective: str = None
    seed: int = None
    optimistic_selection: bool = False
    checkpoint: object = field(default=None, repr=False, compare=False)

    @property
    def available_folds(self):
        """Folds that contribute to the aggregates."""
        return [fold for fold in self.folds if fold.available]

    def _column(self, name):
        return np.array([getattr(fold.metrics, name) for fold in self.available_folds],
                        dtype=np.float64)

    @property
    def mean(self):
        """``{metric: mean}`` over available folds (NaN when there are none)."""
        return {name: float(np.mean(self._column(name))) if self.available_folds else float("nan")
                for name in METRIC_FIELDS}

    @property
    def std(self):
        """``{metric: population std}`` over available folds."""
        return {name: float(np.std(self._column(name))) if self.available_folds else float("nan")
                for name in METRIC_FIELDS}

    def to_dict(self, include_timing=False):
        """
        Versioned JSON document; wall-clock seconds are left out unless
        ``include_timing`` so equal seeds give equal documents.
        """
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "protocol": self.protocol.value,
            "model_kind": self.model_kind,
            "objective": self.objective,
            "seed": self.seed,
            "optimistic_selection": self.optimistic_selection,
            "folds": [fold.to_dict(include_timing) for fold in self.folds],
            "excluded_folds": [fold.fold_id for fold in self.folds if not fold.available],
            "mean": _json_safe(self.mean),
            "std": _json_safe(self.std),
        }

    def to_json(self, include_timing=False):
        """Canonical JSON text of :meth:`to_dict`."""
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, document):
        """Rebuild a report (without checkpoint) from :meth:`to_dict` output."""
        return cls(
            protocol=Protocol(document["protocol"]),
            folds=[FoldResult.from_dict(fold) for fold in document["folds"]],
            model_kind=document.get("model_kind"),
            objective=document.get("objective"),
            seed=document.get("seed"),
            optimistic_selection=document.get("optimistic_selection", False),
        )


def _json_safe(values):
    return {name: None if np.isnan(value) else value for name, value in values.items()}


def _imbalance_pct(labels):
    return 100.0 * float(labels.sum()) / labels.size if labels.size else 0.0


def _table_row(label, cells, imbalance, metrics):
    return [label, cells, imbalance,
            metrics["roc_auc"] * 100, metrics["pr_auc"] * 100,
            metrics["mean_height"], metrics["mean_rheight"]]


def render_table(report, tablefmt="github"):
    """
    Per-fold rows plus a ``mean (std)`` row. ROC and PR are shown ×100;
    unavailable folds show ``n/a``.
    """
    rows = []
    for fold in report.folds:
        if fold.available:
            rows.append(_table_row(fold.fold_id, fold.n_cells, f"{fold.imbalance_pct:.2f}",
                                   fold.metrics.to_dict()))
        else:
            rows.append([fold.fold_id, fold.n_cells, f"{fold.imbalance_pct:.2f}"] +
                        ["n/a"] * 4)
    mean, std = report.mean, report.std
    scale = {"roc_auc": 100, "pr_auc": 100, "mean_height": 1, "mean_rheight": 1}
    rows.append(["mean (std)", "", ""] + [
        f"{mean[name] * scale[name]:.2f} ({std[name] * scale[name]:.2f})"
        for name in METRIC_FIELDS])
    return tabulate(rows, headers=_TABLE_HEADERS, tablefmt=tablefmt, floatfmt=".2f")


class RELandProtocols(RELandComponent):
    """
    Runs the validation protocols. Folds run on a thread pool when the
    component was built with ``jobs > 1``; each fold owns its model and RNG.
    """

    def __init__(self, log_level, jobs=1):
        super().__init__(log_level, jobs)
        self._trainer = RELandTrainer(log_level, jobs)
        self._datasets = RELandDatasets(log_level, jobs)

    def _map(self, function, items):
        if self._jobs > 1:
            with ThreadPoolExecutor(max_workers=self._jobs) as pool:
                return list(pool.map(function, items))
        return [function(item) for item in items]

    def _failed_fold(self, fold_id, dataset, err, started):
        self._logger.warning(
            f"Fold {fold_id} could not be trained ({err.category}: {err}), "
            "excluded from the aggregates")
        return FoldResult(fold_id, None, None, time.perf_counter() - started,
                          _imbalance_pct(dataset.labels), len(dataset), None, available=False,
                          error=err.category)

    def _fold_result(self, fold_id, dataset, scores, best_epoch, started):
        labels = dataset.labels
        n_cells = len(dataset)
        imbalance = _imbalance_pct(labels)
        if labels.min() == labels.max():
            self._logger.warning(
                f"Fold {fold_id} has a single class in its validation cells, "
                "excluded from the aggregates")
            return FoldResult(fold_id, None, best_epoch, time.perf_counter() - started,
                              imbalance, n_cells, None, available=False)
        hard = environment_tags(dataset.env_values, labels)
        hard_auc = None
        if hard.any() and 0 < labels[hard].sum() < hard.sum():
            hard_auc = roc_auc(scores[hard], labels[hard])
        metrics = evaluate(scores, labels)
        self._logger.info(
            f"Fold {fold_id}: ROC {metrics.roc_auc:.4f}, PR {metrics.pr_auc:.4f}, "
            f"Height {metrics.mean_height:.2f}, rHeight {metrics.mean_rheight:.2f}")
        return FoldResult(fold_id, metrics, best_epoch, time.perf_counter() - started,
                          imbalance, n_cells, hard_auc)

    @staticmethod
    def _check_schema(first, second):
        if tuple(first.feature_names) != tuple(second.feature_names):
            raise SchemaError(
                "datasets do not share feature columns: "
                f"{list(first.feature_names)} vs {list(second.feature_names)}")

    def block_cv(self, dataset, model_kind, config):
        """
        Leave-one-municipality-out cross-validation. The held-out municipality
        also selects the checkpoint, so the report is flagged as optimistic.
        """
        municipalities = sorted(set(dataset.municipality))
        if len(municipalities) < 2:
            raise ConfigError("blockCV needs at least 2 municipalities")
        splits = list(LeaveOneGroupOut().split(dataset.features, groups=dataset.municipality))
        self._logger.warning("blockCV selects checkpoints on the validation municipality")

        def run_fold(split):
            train_idx, val_idx = split
            started = time.perf_counter()
            val_ds = dataset.subset(val_idx)
            fold_id = str(val_ds.municipality[0])
            self._logger.debug(f"Training fold {fold_id}...")
            if val_ds.labels.min() == val_ds.labels.max():
                return self._fold_result(fold_id, val_ds, None, None, started)
            try:
                checkpoint = self._trainer.train(model_kind, dataset.subset(train_idx), config,
                                                 val_ds=val_ds)
            except DomainError as err:
                return self._failed_fold(fold_id, val_ds, err, started)
            return self._fold_result(fold_id, val_ds, checkpoint.score(val_ds),
                                     checkpoint.training["best_epoch"], started)

        folds = self._map(run_fold, splits)
        return ProtocolReport(Protocol.BLOCK_CV, folds, ModelKind(model_kind).value,
                              config.objective.value, config.seed, optimistic_selection=True)

    def _per_municipality(self, checkpoint, dataset, best_epoch, started):
        folds = []
        for name, indices in self._datasets.split_by_municipality(dataset).items():
            subset = dataset.subset(indices)
            folds.append(self._fold_result(name, subset, checkpoint.score(subset), best_epoch,
                                           started))
        return folds

    def block_v(self, train_ds, test_ds, model_kind, config):
        """
        Train one model on all of region A (checkpoint selected on a
        municipality-stratified holdout of A) and evaluate it on every
        municipality of region B. The trained checkpoint is attached to the
        report.
        """
        self._check_schema(train_ds, test_ds)
        if len(test_ds) == 0:
            raise ConfigError("blockV needs at least one test municipality")
        started = time.perf_counter()
        checkpoint = self._trainer.train(model_kind, train_ds, config,
                                         forbidden_cells=test_ds.cell_ids)
        folds = self._per_municipality(checkpoint, test_ds, checkpoint.training["best_epoch"],
                                       started)
        return ProtocolReport(Protocol.BLOCK_V, folds, ModelKind(model_kind).value,
                              config.objective.value, config.seed, checkpoint=checkpoint)

    # pylint: disable=too-many-arguments
    def transfer_cv(self, checkpoint, dataset, config, fine_tune_epochs=None,
                    fine_tune_lr=DEFAULT_FINE_TUNE_LR):
        """
        For each municipality of region B, fine-tune a copy of ``checkpoint``
        on the other municipalities (at ``fine_tune_lr``, checkpoint selected on
        a stratified holdout of them) and evaluate on the held-out one.
        ``fine_tune_epochs`` defaults to ``config.epochs`` and may be 0.
        """
        checkpoint.check_schema(dataset)
        municipalities = sorted(set(dataset.municipality))
        if not municipalities:
            raise ConfigError("transferCV needs at least one municipality")
        tune_config = replace(config, base_lr=fine_tune_lr)

        def run_fold(name):
            started = time.perf_counter()
            held_out = dataset.municipality == name
            val_ds = dataset.subset(np.flatnonzero(held_out))
            rest = dataset.subset(np.flatnonzero(~held_out))
            self._logger.debug(f"Fine-tuning fold {name}...")
            tuned = checkpoint
            best_epoch = checkpoint.training.get("best_epoch")
            if fine_tune_epochs != 0 and len(rest) > 0:
                try:
                    tuned = self._trainer.fine_tune(checkpoint, rest, tune_config,
                                                    forbidden_cells=val_ds.cell_ids,
                                                    epochs=fine_tune_epochs)
                except DomainError as err:
                    return self._failed_fold(name, val_ds, err, started)
                best_epoch = tuned.training.get("best_epoch")
            return self._fold_result(name, val_ds, tuned.score(val_ds), best_epoch, started)

        folds = self._map(run_fold, municipalities)
        return ProtocolReport(Protocol.TRANSFER_CV, folds, checkpoint.model_kind.value,
                              config.objective.value, config.seed)
