"""
Module for the versioned JSON checkpoint: a trained model together with the
feature schema and the standardization statistics applied to its inputs.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from ._constants import CHECKPOINT_FORMAT_VERSION, ModelKind
from .exceptions import SchemaError
from .models import build_model, select_feature_column


def standardization_stats(features):
    """
    Per-feature mean and (population) standard deviation; constant columns
    get a scale of 1.
    """
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


# pylint: disable=too-many-instance-attributes
@dataclass
class Checkpoint:
    """
    A trained model plus everything needed to score new cells with it.
    ``selected_feature`` is only set for the single-feature baseline.
    """

    model_kind: ModelKind
    model: object
    feature_names: tuple
    env_feature: str
    mean: np.ndarray
    scale: np.ndarray
    selected_feature: str = None
    training: dict = field(default_factory=dict)

    def check_schema(self, dataset):
        """
        Reject a dataset whose feature columns differ from the checkpoint's.
        """
        if tuple(dataset.feature_names) != tuple(self.feature_names):
            raise SchemaError(
                "dataset features do not match the checkpoint: expected "
                f"{list(self.feature_names)}, got {list(dataset.feature_names)}")

    def model_inputs(self, features):
        """
        Standardize raw feature rows and keep the columns the model reads.
        """
        standardized = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        if self.selected_feature is not None:
            column = select_feature_column(self.feature_names, self.selected_feature)
            return standardized[:, [column]]
        return standardized

    def score(self, dataset):
        """
        Inference-mode risk probabilities for every cell of ``dataset``.
        """
        self.check_schema(dataset)
        return self.model.predict(self.model_inputs(dataset.features))

    def copy(self):
        """
        Independent copy; the model is deep-copied.
        """
        return Checkpoint(
            self.model_kind, self.model.copy(), tuple(self.feature_names), self.env_feature,
            self.mean.copy(), self.scale.copy(), self.selected_feature, dict(self.training))

    def to_dict(self):
        """
        JSON document of the checkpoint.
        """
        state = self.model.state_dict()
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_kind": self.model_kind.value,
            "config": self.model.config(),
            "parameters": state["parameters"],
            "buffers": state["buffers"],
            "frozen_mask": state.get("frozen_mask"),
            "feature_names": list(self.feature_names),
            "env_feature": self.env_feature,
            "selected_feature": self.selected_feature,
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "training": self.training,
        }

    @classmethod
    def from_dict(cls, document):
        """
        Rebuild a checkpoint from :meth:`to_dict` output.
        """
        version = document.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise SchemaError(f"unsupported checkpoint format version: {version}")
        try:
            kind = ModelKind(document["model_kind"])
            config = dict(document["config"])
            model = build_model(kind, config["d"], model_config=config)
            state = {"parameters": document["parameters"], "buffers": document["buffers"]}
            if kind is ModelKind.RELAND:
                state["frozen_mask"] = document.get("frozen_mask")
            model.load_state_dict(state)
            standardization = document["standardization"]
            return cls(
                model_kind=kind,
                model=model,
                feature_names=tuple(document["feature_names"]),
                env_feature=document["env_feature"],
                mean=np.array(standardization["mean"], dtype=np.float64),
                scale=np.array(standardization["scale"], dtype=np.float64),
                selected_feature=document.get("selected_feature"),
                training=dict(document.get("training", {})),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise SchemaError(f"malformed checkpoint document: {err}") from err

    def to_json(self):
        """
        Canonical JSON text: sorted keys, two-space indent.
        """
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path):
        """Write :meth:`to_json` to ``path``."""
        with open(path, "w", encoding="utf-8") as checkpoint_file:
            checkpoint_file.write(self.to_json())

    @classmethod
    def load(cls, path):
        """Read a checkpoint written by :meth:`save`."""
        with open(path, "r", encoding="utf-8") as checkpoint_file:
            try:
                document = json.load(checkpoint_file)
            except json.JSONDecodeError as err:
                raise SchemaError(f"checkpoint {path} is not valid JSON: {err}") from err
        return cls.from_dict(document)
