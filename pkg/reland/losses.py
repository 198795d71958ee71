"""
Module for the training objectives: cross-entropy, the IRM environment
penalty with its micro-batch scheme, the p-push ranking norm, the joint pushed
objective, and the gradient/Hessian kernels and split criterion that push
gradient-boosted and random-forest trees.
"""

import numpy as np
from scipy.special import expit, logsumexp

from ._constants import PROB_CLAMP, EnvironmentTag, RemainderPolicy
from .exceptions import DimensionError, DomainError, SingularityError

# exp() overflows just above 709
_LOG_OVERFLOW = 700.0
_LOG_UNDERFLOW = -700.0
_LN2 = np.log(2.0)


def _as_arrays(first, second, what):
    first = np.asarray(first, dtype=np.float64).ravel()
    second = np.asarray(second, dtype=np.float64).ravel()
    if first.shape != second.shape:
        raise DimensionError(f"{what}: lengths {first.size} and {second.size} differ")
    return first, second


def as_hard_mask(tags):
    """
    Convert a sequence of :class:`EnvironmentTag` (or booleans, ``True`` for
    Hard) into a boolean numpy mask.
    """
    if isinstance(tags, np.ndarray) and tags.dtype == bool:
        return tags
    return np.array([tag is EnvironmentTag.HARD if isinstance(tag, EnvironmentTag) else bool(tag)
                     for tag in tags], dtype=bool)


def cross_entropy(probs, labels):
    """
    Mean binary cross-entropy with probabilities clamped to ``[eps, 1 - eps]``.
    """
    probs, labels = _as_arrays(probs, labels, "cross_entropy")
    clamped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(labels * np.log(clamped) + (1.0 - labels) * np.log1p(-clamped))))


def cross_entropy_grad(probs, labels):
    """
    Gradient of :func:`cross_entropy` w.r.t. ``probs``; zero where the clamp
    is active.
    """
    probs, labels = _as_arrays(probs, labels, "cross_entropy_grad")
    n = probs.size
    active = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    safe = np.where(active, probs, 0.5)
    grad = (-labels / safe + (1.0 - labels) / (1.0 - safe)) / n
    return np.where(active, grad, 0.0)


def irm_penalty_env(logits, labels):
    """
    Squared derivative, at ``w = 1``, of the mean cross-entropy of
    ``sigmoid(w * z)``: ``D ** 2`` with ``D = mean((sigmoid(z) - y) * z)``.
    """
    logits, labels = _as_arrays(logits, labels, "irm_penalty_env")
    if logits.size == 0:
        raise DomainError("IRM penalty of an empty environment is undefined")
    slope = np.mean((expit(logits) - labels) * logits)
    return float(slope * slope)


def irm_penalty_env_grad(logits, labels):
    """
    Gradient of :func:`irm_penalty_env` w.r.t. each logit.
    """
    logits, labels = _as_arrays(logits, labels, "irm_penalty_env_grad")
    if logits.size == 0:
        raise DomainError("IRM penalty of an empty environment is undefined")
    probs = expit(logits)
    slope = np.mean((probs - labels) * logits)
    return 2.0 * slope * (probs * (1.0 - probs) * logits + probs - labels) / logits.size


def irm_environments(hard_mask, remainder_policy=RemainderPolicy.MERGE_INTO_LAST):
    """
    Split a batch into the Hard environment and Hard-sized Easy micro-batches.

    Returns a list of index arrays, Hard first. Easy samples are cut in batch
    order into chunks of ``h = #Hard``. A trailing chunk shorter than ``h`` is
    merged into the previous chunk or dropped per ``remainder_policy``. With
    fewer than ``h`` Easy samples in total they form one chunk when merging;
    dropping it leaves no Easy environment. A batch with no Hard or no Easy
    environment yields ``[]``.
    """
    hard_mask = as_hard_mask(hard_mask)
    hard_idx = np.flatnonzero(hard_mask)
    easy_idx = np.flatnonzero(~hard_mask)
    h = hard_idx.size
    if h == 0 or easy_idx.size == 0:
        return []
    n_full = easy_idx.size // h
    if n_full == 0:
        if remainder_policy is RemainderPolicy.DROP_REMAINDER:
            return []
        return [hard_idx, easy_idx]
    chunks = [easy_idx[i * h:(i + 1) * h] for i in range(n_full)]
    remainder = easy_idx[n_full * h:]
    if remainder.size and remainder_policy is RemainderPolicy.MERGE_INTO_LAST:
        chunks[-1] = np.concatenate([chunks[-1], remainder])
    return [hard_idx] + chunks


def _microbatch_scale(irm_config, n):
    batch_size = irm_config.batch_size if irm_config.batch_size is not None else n
    return irm_config.lambda_ / batch_size


def irm_microbatch_penalty(logits, labels, tags, irm_config):
    """
    ``(lambda / B) * [pen(Hard) + sum_i pen(Easy_i)]`` over the micro-batch
    environments of :func:`irm_environments`. Zero when ``lambda`` is zero or
    the batch lacks one of the two environments.
    """
    logits, labels = _as_arrays(logits, labels, "irm_microbatch_penalty")
    if logits.size == 0:
        raise DomainError("IRM penalty of an empty batch is undefined")
    if irm_config.lambda_ == 0:
        return 0.0
    environments = irm_environments(tags, irm_config.remainder_policy)
    total = sum(irm_penalty_env(logits[idx], labels[idx]) for idx in environments)
    return _microbatch_scale(irm_config, logits.size) * total


def irm_microbatch_penalty_grad(logits, labels, tags, irm_config):
    """
    Return ``(value, grad)`` of :func:`irm_microbatch_penalty`, ``grad`` being
    per-logit.
    """
    logits, labels = _as_arrays(logits, labels, "irm_microbatch_penalty_grad")
    grad = np.zeros_like(logits)
    if logits.size == 0:
        raise DomainError("IRM penalty of an empty batch is undefined")
    if irm_config.lambda_ == 0:
        return 0.0, grad
    scale = _microbatch_scale(irm_config, logits.size)
    total = 0.0
    for idx in irm_environments(tags, irm_config.remainder_policy):
        total += irm_penalty_env(logits[idx], labels[idx])
        grad[idx] += scale * irm_penalty_env_grad(logits[idx], labels[idx])
    return scale * total, grad


def _pair_losses(pos_scores, neg_scores):
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise DomainError("p-push norm needs at least one positive and one negative score")
    margins = pos[:, None] - neg[None, :]
    # logistic loss log(1 + exp(-margin)), shape (P, N)
    return margins, np.logaddexp(0.0, -margins)


def _column_norms(pair_losses, p):
    n_pos = pair_losses.shape[0]
    if n_pos == 1:
        return pair_losses[0].copy()
    with np.errstate(divide="ignore"):
        log_losses = np.log(pair_losses)
    # direct powers only when none of them overflows or underflows
    finite = log_losses[np.isfinite(log_losses)]
    if finite.size and _LOG_UNDERFLOW < p * finite.min() and p * finite.max() < _LOG_OVERFLOW:
        return np.mean(pair_losses ** p, axis=0) ** (1.0 / p)
    log_norms = (logsumexp(p * log_losses, axis=0) - np.log(n_pos)) / p
    return np.exp(log_norms)


def pnorm_push(pos_scores, neg_scores, p):
    """
    p-push norm: ``(1/N) sum_j ((1/P) sum_i l(f_i - f_j) ** p) ** (1/p)`` with
    the logistic loss ``l(x) = log(1 + exp(-x))``. Inner powers move to log
    space when they would overflow or underflow; with a single positive the
    value is the plain mean pair loss for every ``p``.
    """
    if p < 1:
        raise DomainError(f"push exponent must be >= 1, got {p}")
    _, pair_losses = _pair_losses(pos_scores, neg_scores)
    return float(np.mean(_column_norms(pair_losses, p)))


def pnorm_push_grad(pos_scores, neg_scores, p):
    """
    Return ``(grad_pos, grad_neg)`` of :func:`pnorm_push`.
    """
    if p < 1:
        raise DomainError(f"push exponent must be >= 1, got {p}")
    margins, pair_losses = _pair_losses(pos_scores, neg_scores)
    n_pos, n_neg = pair_losses.shape
    norms = _column_norms(pair_losses, p)
    ratio = np.divide(pair_losses, norms[None, :], out=np.zeros_like(pair_losses),
                      where=norms[None, :] > 0)
    weights = ratio ** (p - 1.0) / n_pos
    # d l(x) / dx = -sigmoid(-x)
    slope = expit(-margins)
    grad_pos = -(weights * slope).sum(axis=1) / n_neg
    grad_neg = (weights * slope).sum(axis=0) / n_neg
    return grad_pos, grad_neg


def pushed_objective(probs, labels, push_config):
    """
    Cross-entropy plus ``lambda_p`` times the p-push norm of positive against
    negative probabilities. Batches lacking one class get cross-entropy only.
    """
    probs, labels = _as_arrays(probs, labels, "pushed_objective")
    loss = cross_entropy(probs, labels)
    positive = labels == 1
    if push_config.lambda_p == 0 or positive.all() or not positive.any():
        return loss
    return loss + push_config.lambda_p * pnorm_push(probs[positive], probs[~positive],
                                                    push_config.p)


def pushed_objective_grad(probs, labels, push_config):
    """
    Gradient of :func:`pushed_objective` w.r.t. ``probs``.
    """
    probs, labels = _as_arrays(probs, labels, "pushed_objective_grad")
    grad = cross_entropy_grad(probs, labels)
    positive = labels == 1
    if push_config.lambda_p == 0 or positive.all() or not positive.any():
        return grad
    grad_pos, grad_neg = pnorm_push_grad(probs[positive], probs[~positive], push_config.p)
    grad[positive] += push_config.lambda_p * grad_pos
    grad[~positive] += push_config.lambda_p * grad_neg
    return grad


def pushed_gbdt_gradient(y_hat_n, y_n, y_hat_p, p=None):  # pylint: disable=unused-argument
    """
    Gradient for negative samples of a pushed boosted model, w.r.t. the raw
    margin:

    ``G_n = y_hat_n - y_n + y_hat_n (1 - y_hat_n) mean_i sigmoid(y_hat_n - y_hat_p_i)``.

    ``y_hat_n``/``y_n`` may be scalars or aligned vectors. ``p`` does not
    enter the gradient; it is accepted for symmetry with
    :func:`pushed_gbdt_hessian`.
    """
    y_hat_p = np.asarray(y_hat_p, dtype=np.float64).ravel()
    if y_hat_p.size == 0:
        raise DomainError("pushed gradient of a negative needs at least one positive")
    y_hat_n = np.asarray(y_hat_n, dtype=np.float64)
    y_n = np.asarray(y_n, dtype=np.float64)
    push = expit(y_hat_n[..., None] - y_hat_p).mean(axis=-1)
    return y_hat_n - y_n + y_hat_n * (1.0 - y_hat_n) * push


def pushed_gbdt_gradient_pos(y_hat_p, y_p):
    """
    Gradient for positive samples: the plain cross-entropy residual.
    """
    return np.asarray(y_hat_p, dtype=np.float64) - np.asarray(y_p, dtype=np.float64)


# pylint: disable=too-many-arguments
def pushed_gbdt_hessian(y_hat_n, y_n, grad_n, y_hat_p, p, use_prediction_variance=False):
    """
    Hessian for negative samples of a pushed boosted model:

    ``H_n = y_n (1 - y_n) + p L^(p-2) ((p - 1) G_n^2 + L H)`` with
    ``L = mean_i log(1 + exp(y_hat_n - y_hat_p_i)) ** p`` and
    ``H = mean_i s_i (s_i y_hat_n^2 (1 - y_hat_n^2) + 1)``,
    ``s_i = sigmoid(y_hat_n - y_hat_p_i)``.

    The leading term uses the labels; ``use_prediction_variance`` swaps it for
    ``y_hat_n (1 - y_hat_n)``.
    """
    y_hat_p = np.asarray(y_hat_p, dtype=np.float64).ravel()
    if y_hat_p.size == 0:
        raise DomainError("pushed Hessian of a negative needs at least one positive")
    y_hat_n = np.asarray(y_hat_n, dtype=np.float64)
    y_n = np.asarray(y_n, dtype=np.float64)
    grad_n = np.asarray(grad_n, dtype=np.float64)
    diffs = y_hat_n[..., None] - y_hat_p
    level = (np.logaddexp(0.0, diffs) ** p).mean(axis=-1)
    if p < 2 and np.any(level == 0):
        raise SingularityError(f"L = 0 raised to the power {p - 2}")
    squashed = expit(diffs)
    y_hat_n_sq = y_hat_n[..., None] ** 2
    curvature = (squashed * (squashed * y_hat_n_sq * (1.0 - y_hat_n_sq) + 1.0)).mean(axis=-1)
    leading = y_hat_n * (1.0 - y_hat_n) if use_prediction_variance else y_n * (1.0 - y_n)
    return leading + p * level ** (p - 2.0) * ((p - 1.0) * grad_n ** 2 + level * curvature)


def pushed_gbdt_hessian_pos(y_p, y_hat_p, use_prediction_variance=False):
    """
    Hessian for positive samples, ``y_p (1 - y_p)``; ``use_prediction_variance``
    swaps it for ``y_hat_p (1 - y_hat_p)``.
    """
    source = y_hat_p if use_prediction_variance else y_p
    source = np.asarray(source, dtype=np.float64)
    return source * (1.0 - source)


def pushed_gbdt_objective(p, use_prediction_variance=False):
    """
    Build a custom objective ``(raw_margins, labels) -> (grad, hess)`` for a
    gradient-boosting library. ``labels`` may be an array or any object with a
    ``get_label()`` method (such as a boosting library's data matrix).
    """
    def objective(raw_margins, labels):
        if hasattr(labels, "get_label"):
            labels = labels.get_label()
        margins, labels = _as_arrays(raw_margins, labels, "pushed_gbdt_objective")
        preds = expit(margins)
        positive = labels == 1
        if not positive.any():
            raise DomainError("pushed objective needs at least one positive sample")
        grad = np.empty_like(preds)
        hess = np.empty_like(preds)
        grad[positive] = pushed_gbdt_gradient_pos(preds[positive], labels[positive])
        hess[positive] = pushed_gbdt_hessian_pos(labels[positive], preds[positive],
                                                 use_prediction_variance)
        negative = ~positive
        if negative.any():
            grad_n = pushed_gbdt_gradient(preds[negative], labels[negative], preds[positive], p)
            grad[negative] = grad_n
            hess[negative] = pushed_gbdt_hessian(preds[negative], labels[negative], grad_n,
                                                 preds[positive], p, use_prediction_variance)
        return grad, hess

    return objective


def pnorm_split_gain(labels_left, labels_right, p):
    """
    Push-norm gain of a tree split: ``ln 2`` (the constant parent norm) minus
    the p-push norm of the child-fraction predictions. A node holding a single
    class has no ranking signal and gains 0.
    """
    left = np.asarray(labels_left, dtype=np.float64).ravel()
    right = np.asarray(labels_right, dtype=np.float64).ravel()
    combined = np.concatenate([left, right])
    if combined.size == 0 or combined.min() == combined.max():
        return 0.0
    pos_scores, neg_scores = [], []
    for child in (left, right):
        if child.size == 0:
            continue
        fraction = child.mean()
        n_pos = int(child.sum())
        pos_scores.extend([fraction] * n_pos)
        neg_scores.extend([fraction] * (child.size - n_pos))
    return float(_LN2 - pnorm_push(pos_scores, neg_scores, p))


def best_pnorm_split(values, labels, p):
    """
    Scan every threshold of one feature (midpoints between consecutive distinct
    values, left branch ``value <= threshold``) and return
    ``(threshold, gain)`` maximizing :func:`pnorm_split_gain`. Returns
    ``(None, 0.0)`` when the feature is constant.
    """
    values, labels = _as_arrays(values, labels, "best_pnorm_split")
    distinct = np.unique(values)
    best_threshold, best_gain = None, 0.0
    for low, high in zip(distinct[:-1], distinct[1:]):
        threshold = (low + high) / 2.0
        left = values <= threshold
        gain = pnorm_split_gain(labels[left], labels[~left], p)
        if best_threshold is None or gain > best_gain:
            best_threshold, best_gain = threshold, gain
    return best_threshold, best_gain
