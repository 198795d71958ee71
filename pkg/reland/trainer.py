"""
Module for the training loop: seeded mini-batch training under the ERM, IRM
and pushed objectives with best-validation checkpoint selection, plus
evaluation, scoring and feature importance of checkpoints.
"""

import numpy as np

from ._constants import HOLDOUT_FRACTION, ModelKind
from .checkpoint import Checkpoint, standardization_stats
from .component import RELandComponent
from .dataset import RELandDatasets, environment_tags
from .exceptions import ConfigError, DomainError, LeakageError, SchemaError, TrainingError
from .losses import \
    cross_entropy, cross_entropy_grad, irm_microbatch_penalty_grad, pushed_objective, \
    pushed_objective_grad
from .metrics import evaluate, roc_auc
from .models import build_model, select_feature_column
from .tensor_core import AdamState, adam_step


def minibatches(order, batch_size):
    """
    Cut ``order`` into consecutive batches of ``batch_size``. A trailing
    single-sample batch joins the previous one so batch norm always sees at
    least two samples.
    """
    batches = [order[start:start + batch_size] for start in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def objective_and_grad(result, labels, hard, config):
    """
    Loss of one batch and its gradient w.r.t. the model logits, for the
    objective named in ``config``. ``hard`` is the batch's Hard mask (only
    read by the IRM objectives).
    """
    probs, logits = result.probs, result.logits
    if config.uses_push:
        loss = pushed_objective(probs, labels, config.push)
        grad_probs = pushed_objective_grad(probs, labels, config.push)
    else:
        loss = cross_entropy(probs, labels)
        grad_probs = cross_entropy_grad(probs, labels)
    grad_logits = grad_probs * probs * (1.0 - probs)
    if config.uses_irm and config.irm.lambda_ != 0:
        penalty, grad_penalty = irm_microbatch_penalty_grad(logits, labels, hard, config.irm)
        loss += penalty
        grad_logits = grad_logits + grad_penalty
    return loss, grad_logits


class RELandTrainer(RELandComponent):
    """
    Trains models into :class:`reland.checkpoint.Checkpoint` objects and
    evaluates them.
    """

    def __init__(self, log_level, jobs=1):
        super().__init__(log_level, jobs)
        self._datasets = RELandDatasets(log_level, jobs)

    # pylint: disable=too-many-arguments
    def train(self, model_kind, train_ds, config, val_ds=None, forbidden_cells=None):
        """
        Train a fresh model and return the checkpoint of the epoch with the
        best validation ROC-AUC (earliest on ties).

        Without ``val_ds`` a municipality-stratified holdout of ``train_ds``
        selects the checkpoint. ``forbidden_cells`` are cell ids that must not
        appear in training or selection data.
        """
        return self._fit(ModelKind(model_kind), train_ds, config, val_ds, forbidden_cells,
                         None, config.epochs)

    def fine_tune(self, checkpoint, train_ds, config, val_ds=None, forbidden_cells=None,
                  epochs=None):
        """
        Continue training a copy of ``checkpoint`` on ``train_ds``, keeping its
        standardization statistics. ``epochs`` (default ``config.epochs``) may
        be 0, returning an unchanged copy.
        """
        epochs = config.epochs if epochs is None else epochs
        if epochs < 0:
            raise ConfigError(f"fine-tune epochs must be >= 0, got {epochs}")
        checkpoint.check_schema(train_ds)
        if epochs == 0:
            return checkpoint.copy()
        return self._fit(checkpoint.model_kind, train_ds, config, val_ds, forbidden_cells,
                         checkpoint, epochs)

    def evaluate(self, checkpoint, dataset):
        """
        :class:`reland.metrics.MetricReport` of ``checkpoint`` on ``dataset``.
        """
        return evaluate(checkpoint.score(dataset), dataset.labels)

    def score(self, checkpoint, dataset):
        """
        Risk probabilities of every cell of ``dataset``.
        """
        return checkpoint.score(dataset)

    def importance(self, checkpoint, dataset, per_sample=False):
        """
        Global feature importance of a RELand checkpoint over ``dataset``.
        """
        if checkpoint.model_kind is not ModelKind.RELAND:
            raise DomainError(
                f"feature importance needs a reland checkpoint, got {checkpoint.model_kind.value}")
        checkpoint.check_schema(dataset)
        if len(dataset) == 0:
            raise DomainError("feature importance of an empty dataset is undefined")
        return checkpoint.model.feature_importance(
            checkpoint.model_inputs(dataset.features), per_sample=per_sample)

    def _check_leakage(self, forbidden_cells, *datasets):
        if forbidden_cells is None or len(forbidden_cells) == 0:
            return
        forbidden = set(forbidden_cells)
        for dataset in datasets:
            leaked = forbidden.intersection(dataset.cell_ids)
            if leaked:
                raise LeakageError(
                    f"{len(leaked)} held-out cell(s) reached training or selection, "
                    f"e.g. {sorted(leaked)[0]}")

    def _split_validation(self, train_ds, val_ds, seed):
        if val_ds is not None:
            return train_ds, val_ds
        train_idx, val_idx = self._datasets.holdout_split(train_ds, HOLDOUT_FRACTION, seed)
        if val_idx.size == 0:
            self._logger.warning("No holdout cells available, selecting on the training set")
            return train_ds, train_ds
        return train_ds.subset(train_idx), train_ds.subset(val_idx)

    def _new_checkpoint(self, kind, train_ds, config):
        if config.standardize:
            mean, scale = standardization_stats(train_ds.features)
        else:
            mean = np.zeros(len(train_ds.feature_names))
            scale = np.ones(len(train_ds.feature_names))
        selected = None
        width = len(train_ds.feature_names)
        if kind is ModelKind.LR_SINGLE:
            select_feature_column(train_ds.feature_names, config.feature)
            selected, width = config.feature, 1
        model = build_model(kind, width, config, rng=np.random.default_rng(config.seed))
        return Checkpoint(kind, model, tuple(train_ds.feature_names), train_ds.env_feature,
                          mean, scale, selected)

    @staticmethod
    def _selection_score(model, x_train, x_val, y_val):
        if model.kind is ModelKind.RELAND:
            model.finalize_mask(x_train)
        probs = model.predict(x_val)
        if 0 < y_val.sum() < y_val.size:
            return roc_auc(probs, y_val), "val_roc_auc"
        return -cross_entropy(probs, y_val), "neg_val_cross_entropy"

    # pylint: disable=too-many-locals
    def _fit(self, kind, train_ds, config, val_ds, forbidden_cells, start, epochs):
        train_ds, val_ds = self._split_validation(train_ds, val_ds, config.seed)
        if tuple(val_ds.feature_names) != tuple(train_ds.feature_names):
            raise SchemaError("training and validation datasets have different feature columns")
        self._check_leakage(forbidden_cells, train_ds, val_ds)
        labels = train_ds.labels.astype(np.float64)
        if len(train_ds) < 2 or labels.min() == labels.max():
            raise DomainError("training needs at least two cells and both classes")

        checkpoint = start.copy() if start is not None else \
            self._new_checkpoint(kind, train_ds, config)
        model = checkpoint.model
        x_train = checkpoint.model_inputs(train_ds.features)
        x_val = checkpoint.model_inputs(val_ds.features)
        y_val = val_ds.labels.astype(np.float64)
        hard = environment_tags(train_ds.env_values, train_ds.labels) if config.uses_irm else None

        optimizer = AdamState(base_lr=config.base_lr, decay_factor=config.decay_factor,
                              decay_every=config.decay_every, weight_decay=config.weight_decay)
        params = model.parameters()
        self._logger.debug(
            f"Training {kind.value} with {config.objective.value} on {len(train_ds)} cells "
            f"for {epochs} epochs...")

        best = None
        for epoch in range(epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train_ds))
            for batch_index, idx in enumerate(minibatches(order, config.batch_size)):
                result = model.forward(x_train[idx], training=True)
                loss, grad_logits = objective_and_grad(
                    result, labels[idx], None if hard is None else hard[idx], config)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}",
                        epoch=epoch, batch=batch_index)
                adam_step(optimizer, params, model.backward(grad_logits), epoch)

            selection, metric = self._selection_score(model, x_train, x_val, y_val)
            if best is None or selection > best[0]:
                best = (selection, epoch, model.snapshot(), metric)
            self._logger.debug(f"Epoch {epoch}: {metric} {selection:.6f}")

        model.load_state_dict(best[2])
        checkpoint.training = {
            "best_epoch": best[1],
            "epochs": epochs,
            "objective": config.objective.value,
            "seed": config.seed,
            "selection_metric": best[3],
            "selection_score": float(best[0]),
            "train_cells": len(train_ds),
            "val_cells": len(val_ds),
        }
        self._logger.info(
            f"Best epoch {best[1]} with {best[3]} {best[0]:.4f} ({kind.value}, "
            f"{config.objective.value})")
        return checkpoint
