"""
Module for the training configuration objects and the YAML config file
reader shared by the library and the CLI.
"""

from dataclasses import dataclass, field, fields, replace
from enum import Enum

import yaml

from ._constants import \
    DEFAULT_EPOCHS, DEFAULT_BATCH_SIZE, DEFAULT_BASE_LR, DEFAULT_DECAY_FACTOR, \
    DEFAULT_DECAY_EVERY, DEFAULT_WEIGHT_DECAY, DEFAULT_SEED, DEFAULT_IRM_LAMBDA, \
    DEFAULT_PUSH_P, DEFAULT_PUSH_LAMBDA, DEFAULT_STEPS, DEFAULT_LATENT, DEFAULT_GAMMA, \
    DEFAULT_SINGLE_FEATURE, Objective, RemainderPolicy
from .exceptions import ConfigError

# File keys that differ from the dataclass field names
_KEY_ALIASES = {
    "irm.lambda": "irm.lambda_",
}


@dataclass(frozen=True)
class IrmConfig:
    """
    Invariant Risk Minimization penalty settings.

    ``batch_size`` is the ``B`` in the ``lambda / B`` scaling of the micro-batch
    regularizer. When left as ``None`` the realized length of each mini-batch
    is used.
    """

    lambda_: float = DEFAULT_IRM_LAMBDA
    batch_size: int = None
    remainder_policy: RemainderPolicy = RemainderPolicy.MERGE_INTO_LAST

    def __post_init__(self):
        if not self.lambda_ >= 0:
            raise ConfigError(f"irm.lambda must be >= 0, got {self.lambda_}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"irm.batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class PushConfig:
    """
    p-push norm settings: the push exponent ``p`` and its weight ``lambda_p``
    against the cross-entropy.
    """

    p: float = DEFAULT_PUSH_P
    lambda_p: float = DEFAULT_PUSH_LAMBDA

    def __post_init__(self):
        if not self.p >= 1:
            raise ConfigError(f"push.p must be >= 1, got {self.p}")
        if not self.lambda_p >= 0:
            raise ConfigError(f"push.lambda_p must be >= 0, got {self.lambda_p}")


# pylint: disable=too-many-instance-attributes
@dataclass(frozen=True)
class TrainConfig:
    """
    Everything the training loop needs besides the data. Model shape settings
    (``steps``, ``latent``, ``gamma``) and the ``feature`` used by the
    single-feature baseline live here too so a run is described by one object.
    """

    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    base_lr: float = DEFAULT_BASE_LR
    decay_factor: float = DEFAULT_DECAY_FACTOR
    decay_every: int = DEFAULT_DECAY_EVERY
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    seed: int = DEFAULT_SEED
    objective: Objective = Objective.ERM
    irm: IrmConfig = field(default_factory=IrmConfig)
    push: PushConfig = field(default_factory=PushConfig)
    standardize: bool = True
    steps: int = DEFAULT_STEPS
    latent: int = DEFAULT_LATENT
    gamma: float = DEFAULT_GAMMA
    feature: str = DEFAULT_SINGLE_FEATURE

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"train.batch_size must be >= 2, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ConfigError(f"train.base_lr must be > 0, got {self.base_lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"train.decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"train.decay_every must be >= 1, got {self.decay_every}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if self.seed < 0:
            raise ConfigError(f"train.seed must be >= 0, got {self.seed}")
        if self.steps < 1:
            raise ConfigError(f"train.steps must be >= 1, got {self.steps}")
        if self.latent < 1:
            raise ConfigError(f"train.latent must be >= 1, got {self.latent}")
        if not -1 <= self.gamma <= 1:
            raise ConfigError(f"train.gamma must be in [-1, 1], got {self.gamma}")

    @property
    def uses_irm(self):
        """
        ``True`` when the objective carries the environment penalty.
        """
        return self.objective in (Objective.IRM, Objective.IRM_PUSHED)

    @property
    def uses_push(self):
        """
        ``True`` when the objective carries the p-push norm.
        """
        return self.objective in (Objective.PUSHED, Objective.IRM_PUSHED)


def _coerce(key, raw, target_type):
    try:
        if isinstance(target_type, type) and issubclass(target_type, Enum):
            return target_type(raw.strip().lower())
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw.strip())
        if target_type is float:
            return float(raw.strip())
        return raw.strip()
    except ValueError as err:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from err


def _field_types(config_cls):
    return {fld.name: fld.type for fld in fields(config_cls)}


def read_config_file(path):
    """
    Read a YAML config file into a flat ``{"prefix.key": raw string}`` dict.

    The document is a mapping of sections (``train``, ``irm``, ``push``,
    ``synthetic``) to field values; already-dotted top-level keys are kept as
    they are. Unknown prefixes and unknown keys are rejected when the values
    are applied.
    """
    with open(path, "r", encoding="utf-8") as config_file:
        try:
            document = yaml.safe_load(config_file)
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse config file {path}: {err}") from err
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must hold a mapping of sections")

    values = {}
    for key, value in document.items():
        entries = value.items() if isinstance(value, dict) else [(None, value)]
        for name, raw in entries:
            flat = str(key) if name is None else f"{key}.{name}"
            if raw is None or isinstance(raw, (dict, list)):
                raise ConfigError(f"config key {flat} needs a single value")
            values[flat] = str(raw)
    return values


def split_config_values(values):
    """
    Group flat prefixed keys into ``{prefix: {field: raw}}``, rejecting
    unknown prefixes.
    """
    grouped = {"train": {}, "irm": {}, "push": {}, "synthetic": {}}
    for key, raw in values.items():
        key = _KEY_ALIASES.get(key, key)
        prefix, _, name = key.partition(".")
        if prefix not in grouped or not name:
            raise ConfigError(f"unknown config key: {key}")
        grouped[prefix][name] = raw
    return grouped


def apply_values(config_cls, base, values, prefix):
    """
    Return ``base`` (an instance of ``config_cls``) with the raw string
    ``values`` coerced to the field types and applied.
    """
    types = _field_types(config_cls)
    updates = {}
    for name, raw in values.items():
        if name not in types or name in ("irm", "push"):
            raise ConfigError(f"unknown config key: {prefix}.{name}")
        updates[name] = _coerce(f"{prefix}.{name}", raw, types[name])
    return replace(base, **updates)


def build_train_config(values=None, **overrides):
    """
    Build a :class:`TrainConfig` from flat config file ``values`` and keyword
    ``overrides`` (CLI flags). Overrides win; ``None`` overrides are ignored.
    ``irm_lambda``, ``remainder_policy``, ``push_p`` and ``lambda_p`` route to
    the nested configs.
    """
    grouped = split_config_values(values or {})
    irm = apply_values(IrmConfig, IrmConfig(), grouped["irm"], "irm")
    push = apply_values(PushConfig, PushConfig(), grouped["push"], "push")

    nested_overrides = {
        "irm_lambda": ("irm", "lambda_"),
        "remainder_policy": ("irm", "remainder_policy"),
        "push_p": ("push", "p"),
        "lambda_p": ("push", "lambda_p"),
    }
    train_overrides = {}
    for name, value in overrides.items():
        if value is None:
            continue
        if name in nested_overrides:
            target, attr = nested_overrides[name]
            if target == "irm":
                irm = replace(irm, **{attr: value})
            else:
                push = replace(push, **{attr: value})
        else:
            train_overrides[name] = value

    config = apply_values(TrainConfig, TrainConfig(irm=irm, push=push), grouped["train"], "train")
    unknown = set(train_overrides) - set(_field_types(TrainConfig))
    if unknown:
        raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
    return replace(config, **train_overrides)
