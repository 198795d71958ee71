"""
Module for the trainable models: the RELand sparse-masked network and the MLP
and logistic-regression baselines. Every model exposes named parameter and
buffer arrays, an explicit forward/backward pair and a JSON-friendly state.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import copy

import numpy as np

from ._constants import \
    DEFAULT_STEPS, DEFAULT_LATENT, DEFAULT_GAMMA, MLP_HIDDEN, LOGIT_CLAMP, DEFAULT_SEED, \
    ModelKind
from .exceptions import ConfigError, DimensionError, DomainError, SchemaError, StateError, \
    DegenerateModelError
from .tensor_core import \
    DenseLayer, BatchNormLayer, dense_forward, dense_backward, bn_forward, bn_backward, \
    relu, relu_backward, sigmoid, sparsemax, sparsemax_backward


@dataclass
class ForwardResult:
    """
    Output of a forward pass. ``masks`` and ``step_outputs`` are only filled
    by the RELand model.
    """

    probs: np.ndarray
    logits: np.ndarray
    masks: list = field(default_factory=list)
    step_outputs: list = field(default_factory=list)


@dataclass
class ImportanceReport:
    """
    Global feature importance with the per-step masks and weights it was
    computed from.
    """

    importance: np.ndarray
    masks: np.ndarray
    etas: np.ndarray

    def rows(self, feature_names):
        """
        Return ``(feature, importance)`` pairs in feature order.
        """
        return [(name, float(value)) for name, value in zip(feature_names, self.importance)]


def importance_from_masks(masks, etas):
    """
    Normalized importance ``sum_s eta_s m_s[j] / sum_i sum_s eta_s m_s[i]``.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    etas = np.asarray(etas, dtype=np.float64).ravel()
    if masks.shape[0] != etas.size:
        raise DimensionError(f"{masks.shape[0]} masks but {etas.size} step weights")
    weighted = (etas[:, None] * masks).sum(axis=0)
    total = weighted.sum()
    if not total > 0:
        raise DegenerateModelError("every decision step outputs zero; importance is undefined")
    return weighted / total


def select_feature_column(feature_names, name):
    """
    Index of ``name`` in ``feature_names``.
    """
    try:
        return list(feature_names).index(name)
    except ValueError as err:
        raise SchemaError(f"unknown feature column: {name}") from err


class RELandModelBase(ABC):
    """
    Base class for models trained by :class:`reland.trainer.RELandTrainer`.
    """

    kind = None

    def __init__(self, d):
        if d < 1:
            raise ConfigError(f"model input width must be >= 1, got {d}")
        self.d = d
        self._cache = None

    @abstractmethod
    def forward(self, x, training=True):
        """
        Run the model on a batch ``x`` of shape ``(n, d)``; returns a
        :class:`ForwardResult` and keeps what :meth:`backward` needs.
        """

    @abstractmethod
    def backward(self, grad_logits):
        """
        Gradients of every parameter given the gradient of the loss w.r.t. the
        (clamped) logits of the last forward pass.
        """

    @abstractmethod
    def parameters(self):
        """
        Name -> live parameter array. Updating the arrays in place updates the
        model.
        """

    def buffers(self):
        """
        Name -> live non-trainable array (batch-norm running statistics).
        """
        return {}

    @abstractmethod
    def config(self):
        """
        Shape hyperparameters needed to rebuild the model.
        """

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionError(f"expected input of shape (n, {self.d}), got {x.shape}")
        return x

    @staticmethod
    def _head(raw_logits):
        logits = np.clip(raw_logits, -LOGIT_CLAMP, LOGIT_CLAMP)
        return logits, sigmoid(logits)

    @staticmethod
    def _head_backward(raw_logits, grad_logits):
        grad_logits = np.asarray(grad_logits, dtype=np.float64).ravel()
        if grad_logits.shape != raw_logits.shape:
            raise DimensionError("logit gradient does not match the last forward batch")
        return np.where(np.abs(raw_logits) <= LOGIT_CLAMP, grad_logits, 0.0)

    def _require_cache(self):
        if self._cache is None:
            raise StateError("backward called before forward")
        return self._cache

    def predict(self, x):
        """
        Inference-mode probabilities.
        """
        return self.forward(x, training=False).probs

    def state_dict(self):
        """
        JSON-friendly copy of parameters and buffers.
        """
        return {
            "parameters": {name: value.tolist() for name, value in self.parameters().items()},
            "buffers": {name: value.tolist() for name, value in self.buffers().items()},
        }

    def load_state_dict(self, state):
        """
        Copy arrays from ``state`` (as produced by :meth:`state_dict` or
        :meth:`snapshot`) into the live arrays.
        """
        for group, live in (("parameters", self.parameters()), ("buffers", self.buffers())):
            stored = state.get(group, {})
            if set(stored) != set(live):
                raise SchemaError(
                    f"{group} do not match the model: expected {sorted(live)}, "
                    f"got {sorted(stored)}")
            for name, value in stored.items():
                value = np.asarray(value, dtype=np.float64)
                if value.shape != live[name].shape:
                    raise DimensionError(
                        f"{name}: stored shape {value.shape}, model shape {live[name].shape}")
                live[name][...] = value
        return self

    def snapshot(self):
        """
        Array copy of the current parameters and buffers.
        """
        return {
            "parameters": {name: value.copy() for name, value in self.parameters().items()},
            "buffers": {name: value.copy() for name, value in self.buffers().items()},
        }

    def copy(self):
        """
        Independent deep copy of the model.
        """
        duplicate = copy.deepcopy(self)
        duplicate._cache = None  # pylint: disable=protected-access
        return duplicate


class RelandModel(RELandModelBase):
    """
    Sparse-masked tabular network.

    A single learned head ``FC(d -> d) + BN`` feeds a row-wise SparseMax; its
    batch mean is the first-step mask ``m_1``. Later masks carry no parameters,
    ``m_s = sparsemax(gamma * prod_{j<s} m_j)``, so ``gamma = -1`` steers
    later steps away from features already used. Each step applies
    ``ReLU(BN(FC(m_s * x)))``; the step outputs are summed and mapped to a
    logit by an aggregation layer.

    After training, :meth:`finalize_mask` freezes ``m_1`` as the mean over the
    full training set; inference requires it and is then independent of the
    batch composition.
    """

    kind = ModelKind.RELAND

    # pylint: disable=too-many-arguments
    def __init__(self, d, steps=DEFAULT_STEPS, latent=DEFAULT_LATENT, gamma=DEFAULT_GAMMA,
                 rng=None):
        super().__init__(d)
        if steps < 1:
            raise ConfigError(f"steps must be >= 1, got {steps}")
        if latent < 1:
            raise ConfigError(f"latent width must be >= 1, got {latent}")
        if not -1 <= gamma <= 1:
            raise ConfigError(f"gamma must be in [-1, 1], got {gamma}")
        rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
        self.steps = steps
        self.latent = latent
        self.gamma = float(gamma)
        self.mask_fc = DenseLayer.initialize(d, d, rng)
        self.mask_bn = BatchNormLayer.initialize(d)
        self.blocks = [
            (DenseLayer.initialize(d, latent, rng), BatchNormLayer.initialize(latent))
            for _ in range(steps)
        ]
        self.agg = DenseLayer.initialize(latent, 1, rng)
        self.frozen_mask = None

    def config(self):
        return {"d": self.d, "steps": self.steps, "latent": self.latent, "gamma": self.gamma}

    def parameters(self):
        params = {
            "mask_fc.weights": self.mask_fc.weights,
            "mask_fc.bias": self.mask_fc.bias,
            "mask_bn.scale": self.mask_bn.scale,
            "mask_bn.shift": self.mask_bn.shift,
        }
        for step, (dense, norm) in enumerate(self.blocks):
            params[f"steps.{step}.fc.weights"] = dense.weights
            params[f"steps.{step}.fc.bias"] = dense.bias
            params[f"steps.{step}.bn.scale"] = norm.scale
            params[f"steps.{step}.bn.shift"] = norm.shift
        params["agg.weights"] = self.agg.weights
        params["agg.bias"] = self.agg.bias
        return params

    def buffers(self):
        buffers = {
            "mask_bn.running_mean": self.mask_bn.running_mean,
            "mask_bn.running_var": self.mask_bn.running_var,
        }
        for step, (_, norm) in enumerate(self.blocks):
            buffers[f"steps.{step}.bn.running_mean"] = norm.running_mean
            buffers[f"steps.{step}.bn.running_var"] = norm.running_var
        return buffers

    def step_masks(self, first_mask):
        """
        ``[m_1, ..., m_S]`` from the first-step mask.
        """
        masks = [np.asarray(first_mask, dtype=np.float64)]
        product = masks[0].copy()
        for _ in range(1, self.steps):
            mask = sparsemax(self.gamma * product)
            masks.append(mask)
            product = product * mask
        return masks

    def forward(self, x, training=True):
        x = self._check_input(x)
        cache = {"x": x, "training": training}
        if training:
            head = dense_forward(self.mask_fc, x)
            normed, cache["mask_bn"] = bn_forward(self.mask_bn, head, True)
            cache["sample_masks"] = sparsemax(normed)
            first = cache["sample_masks"].mean(axis=0)
        else:
            if self.frozen_mask is None:
                raise StateError("inference needs a frozen first-step mask; call finalize_mask")
            first = self.frozen_mask
        masks = self.step_masks(first)

        total = np.zeros((x.shape[0], self.latent))
        step_caches, outputs = [], []
        for (dense, norm), mask in zip(self.blocks, masks):
            masked = x * mask
            normed, norm_cache = bn_forward(norm, dense_forward(dense, masked), training)
            activation = relu(normed)
            total = total + activation
            step_caches.append((masked, normed, norm_cache))
            outputs.append(activation)

        raw = dense_forward(self.agg, total)[:, 0]
        logits, probs = self._head(raw)
        cache.update(masks=masks, steps=step_caches, total=total, raw=raw)
        self._cache = cache
        return ForwardResult(probs, logits, masks, outputs)

    def backward(self, grad_logits):
        cache = self._require_cache()
        x = cache["x"]
        masks = cache["masks"]
        grad_raw = self._head_backward(cache["raw"], grad_logits)
        grad_total, grad_w, grad_b = dense_backward(self.agg, cache["total"], grad_raw[:, None])
        grads = {"agg.weights": grad_w, "agg.bias": grad_b}

        mask_grads = []
        for step, ((dense, norm), (masked, normed, norm_cache)) in \
                enumerate(zip(self.blocks, cache["steps"])):
            grad_pre, grad_scale, grad_shift = \
                bn_backward(norm, norm_cache, relu_backward(normed, grad_total))
            grad_masked, grad_w, grad_b = dense_backward(dense, masked, grad_pre)
            grads[f"steps.{step}.fc.weights"] = grad_w
            grads[f"steps.{step}.fc.bias"] = grad_b
            grads[f"steps.{step}.bn.scale"] = grad_scale
            grads[f"steps.{step}.bn.shift"] = grad_shift
            # one mask is shared by every row of the batch
            mask_grads.append((grad_masked * x).sum(axis=0))

        # m_s = sparsemax(gamma * prod_{j<s} m_j); later masks finish first
        for step in range(self.steps - 1, 0, -1):
            grad_product = self.gamma * sparsemax_backward(masks[step], mask_grads[step])
            for j in range(step):
                others = np.ones(self.d)
                for k in range(step):
                    if k != j:
                        others = others * masks[k]
                mask_grads[j] = mask_grads[j] + grad_product * others

        if cache["training"]:
            sample_masks = cache["sample_masks"]
            grad_samples = np.broadcast_to(mask_grads[0] / x.shape[0], sample_masks.shape)
            grad_normed = sparsemax_backward(sample_masks, grad_samples)
            grad_head, grad_scale, grad_shift = bn_backward(self.mask_bn, cache["mask_bn"],
                                                            grad_normed)
            _, grad_w, grad_b = dense_backward(self.mask_fc, x, grad_head)
        else:
            grad_w = np.zeros_like(self.mask_fc.weights)
            grad_b = np.zeros_like(self.mask_fc.bias)
            grad_scale = np.zeros_like(self.mask_bn.scale)
            grad_shift = np.zeros_like(self.mask_bn.shift)
        grads["mask_fc.weights"] = grad_w
        grads["mask_fc.bias"] = grad_b
        grads["mask_bn.scale"] = grad_scale
        grads["mask_bn.shift"] = grad_shift
        return grads

    def finalize_mask(self, x):
        """
        Freeze ``m_1`` as the mean over ``x`` (the full training set) of the
        inference-mode SparseMax head output.
        """
        x = self._check_input(x)
        if x.shape[0] == 0:
            raise DomainError("cannot finalize the mask on an empty dataset")
        normed, _ = bn_forward(self.mask_bn, dense_forward(self.mask_fc, x), False)
        self.frozen_mask = sparsemax(normed).mean(axis=0)
        return self

    def feature_importance(self, x, per_sample=False):
        """
        Global importance over ``x``. ``eta_s`` is the latent sum of the ReLU
        output of step ``s``, averaged over samples; with ``per_sample`` the
        normalized importance is computed per sample and then averaged.
        """
        result = self.forward(x, training=False)
        masks = np.vstack(result.masks)
        per_step = np.vstack([output.sum(axis=1) for output in result.step_outputs])
        if not per_sample:
            etas = per_step.mean(axis=1)
            return ImportanceReport(importance_from_masks(masks, etas), masks, etas)

        weighted = per_step.T @ masks
        totals = weighted.sum(axis=1)
        alive = totals > 0
        if not alive.any():
            raise DegenerateModelError("every decision step outputs zero; importance is undefined")
        importance = (weighted[alive] / totals[alive, None]).mean(axis=0)
        return ImportanceReport(importance / importance.sum(), masks, per_step.mean(axis=1))

    def state_dict(self):
        state = super().state_dict()
        state["frozen_mask"] = None if self.frozen_mask is None else self.frozen_mask.tolist()
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        if "frozen_mask" in state:
            frozen = state["frozen_mask"]
            self.frozen_mask = None if frozen is None else np.array(frozen, dtype=np.float64)
        return self

    def snapshot(self):
        state = super().snapshot()
        state["frozen_mask"] = None if self.frozen_mask is None else self.frozen_mask.copy()
        return state


class MlpModel(RELandModelBase):
    """
    Two hidden ReLU layers of width ``hidden`` and a logit output.
    """

    kind = ModelKind.MLP

    def __init__(self, d, hidden=MLP_HIDDEN, rng=None):
        super().__init__(d)
        rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
        self.hidden = hidden
        self.layers = [
            DenseLayer.initialize(d, hidden, rng),
            DenseLayer.initialize(hidden, hidden, rng),
            DenseLayer.initialize(hidden, 1, rng),
        ]

    def config(self):
        return {"d": self.d, "hidden": self.hidden}

    def parameters(self):
        params = {}
        for index, layer in enumerate(self.layers):
            params[f"fc{index}.weights"] = layer.weights
            params[f"fc{index}.bias"] = layer.bias
        return params

    def forward(self, x, training=True):
        x = self._check_input(x)
        inputs, pre_activations = [], []
        current = x
        for layer in self.layers[:-1]:
            inputs.append(current)
            pre = dense_forward(layer, current)
            pre_activations.append(pre)
            current = relu(pre)
        inputs.append(current)
        raw = dense_forward(self.layers[-1], current)[:, 0]
        logits, probs = self._head(raw)
        self._cache = {"inputs": inputs, "pre": pre_activations, "raw": raw}
        return ForwardResult(probs, logits)

    def backward(self, grad_logits):
        cache = self._require_cache()
        grad = self._head_backward(cache["raw"], grad_logits)[:, None]
        grads = {}
        for index in range(len(self.layers) - 1, -1, -1):
            grad_in, grad_w, grad_b = dense_backward(self.layers[index], cache["inputs"][index],
                                                     grad)
            grads[f"fc{index}.weights"] = grad_w
            grads[f"fc{index}.bias"] = grad_b
            if index > 0:
                grad = relu_backward(cache["pre"][index - 1], grad_in)
        return grads


class LrModel(RELandModelBase):
    """
    Logistic regression: one dense layer to a logit. Also used, on a single
    column, for the single-feature baseline.
    """

    kind = ModelKind.LR

    def __init__(self, d, rng=None):
        super().__init__(d)
        rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
        self.layer = DenseLayer.initialize(d, 1, rng)

    def config(self):
        return {"d": self.d}

    def parameters(self):
        return {"fc.weights": self.layer.weights, "fc.bias": self.layer.bias}

    def forward(self, x, training=True):
        x = self._check_input(x)
        raw = dense_forward(self.layer, x)[:, 0]
        logits, probs = self._head(raw)
        self._cache = {"x": x, "raw": raw}
        return ForwardResult(probs, logits)

    def backward(self, grad_logits):
        cache = self._require_cache()
        grad = self._head_backward(cache["raw"], grad_logits)[:, None]
        _, grad_w, grad_b = dense_backward(self.layer, cache["x"], grad)
        return {"fc.weights": grad_w, "fc.bias": grad_b}


def build_model(kind, d, train_config=None, rng=None, model_config=None):
    """
    Build a freshly initialized model of ``kind``. Shape settings come from
    ``model_config`` (a :meth:`RELandModelBase.config` dict) when given, else
    from ``train_config``.
    """
    kind = ModelKind(kind)
    if model_config is None:
        model_config = {"d": d}
        if kind is ModelKind.RELAND and train_config is not None:
            model_config.update(
                steps=train_config.steps, latent=train_config.latent, gamma=train_config.gamma)
    model_config = dict(model_config)
    model_config.pop("d", None)
    if kind is ModelKind.RELAND:
        return RelandModel(d, rng=rng, **model_config)
    if kind is ModelKind.MLP:
        return MlpModel(d, rng=rng, **model_config)
    model = LrModel(d, rng=rng)
    model.kind = kind
    return model
