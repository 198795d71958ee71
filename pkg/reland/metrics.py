"""
Module for the ranking metrics used to evaluate risk maps: ROC-AUC, PR-AUC
(average precision), mean-Height and mean-rHeight.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import rankdata

from .exceptions import DimensionError, DomainError


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class MetricReport:
    """
    All four metrics for one evaluation region.

    ``discordant_pairs`` is the number of (positive, negative) pairs with the
    positive scored at or below the negative, so
    ``n_neg * mean_height == n_pos * mean_rheight == discordant_pairs``.
    """

    roc_auc: float
    pr_auc: float
    mean_height: float
    mean_rheight: float
    n_pos: int
    n_neg: int
    discordant_pairs: int

    def to_dict(self):
        """Plain dict for JSON reports."""
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        """Inverse of :meth:`to_dict`."""
        return cls(
            roc_auc=float(values["roc_auc"]),
            pr_auc=float(values["pr_auc"]),
            mean_height=float(values["mean_height"]),
            mean_rheight=float(values["mean_rheight"]),
            n_pos=int(values["n_pos"]),
            n_neg=int(values["n_neg"]),
            discordant_pairs=int(values["discordant_pairs"]),
        )


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise DomainError("labels must be 0 or 1")
    positive = labels == 1
    if positive.all() or not positive.any():
        raise DomainError("ranking metrics need both a positive and a negative label")
    return scores, positive


def discordant_pair_count(scores, labels):
    """
    Number of pairs with a positive scored ``<=`` a negative (ties count).
    """
    scores, positive = _split_classes(scores, labels)
    sorted_pos = np.sort(scores[positive])
    return int(np.searchsorted(sorted_pos, scores[~positive], side="right").sum())


def height_metrics(scores, labels):
    """
    Return ``(mean_height, mean_rheight)``: per negative, the number of
    positives scored at or below it, averaged over negatives; dually per
    positive, the negatives scored at or above it, averaged over positives.
    """
    scores, positive = _split_classes(scores, labels)
    pairs = discordant_pair_count(scores, positive.astype(int))
    return pairs / int((~positive).sum()), pairs / int(positive.sum())


def roc_auc(scores, labels):
    """
    Probability that a random positive outranks a random negative, ties
    counting one half (Mann-Whitney statistic on average ranks).
    """
    scores, positive = _split_classes(scores, labels)
    n_pos = int(positive.sum())
    n_neg = scores.size - n_pos
    ranks = rankdata(scores, method="average")
    statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(statistic / (n_pos * n_neg))


def pr_auc(scores, labels):
    """
    Average precision: precision at each recall increment of a descending
    score sweep, tied scores entering as one block.
    """
    scores, positive = _split_classes(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    true_pos = np.cumsum(positive[order])
    # last index of every block of tied scores
    block_ends = np.r_[np.flatnonzero(np.diff(sorted_scores)), sorted_scores.size - 1]
    tp = true_pos[block_ends].astype(np.float64)
    predicted = block_ends + 1.0
    precision = tp / predicted
    recall_steps = np.diff(np.r_[0.0, tp]) / tp[-1]
    return float(np.sum(recall_steps * precision))


def evaluate(scores, labels):
    """
    Compute every metric at once into a :class:`MetricReport`.
    """
    scores, positive = _split_classes(scores, labels)
    labels = positive.astype(int)
    n_pos = int(positive.sum())
    n_neg = scores.size - n_pos
    pairs = discordant_pair_count(scores, labels)
    return MetricReport(
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        mean_height=pairs / n_neg,
        mean_rheight=pairs / n_pos,
        n_pos=n_pos,
        n_neg=n_neg,
        discordant_pairs=pairs,
    )
