"""
Module containing all of the exception classes used by reland.
"""

# https://docs.python.org/3/tutorial/errors.html

# Common Exceptions
class RELandException(Exception):
    """Base class for reland errors."""

    category = "runtime"


class RELandValidationError(RELandException):
    """Base class for errors caused by invalid inputs. (CLI exit code 1)"""

    category = "validation"


class RELandRuntimeError(RELandException):
    """Base class for errors raised while computing. (CLI exit code 2)"""

    category = "runtime"


# Validation Exceptions
class SchemaError(RELandValidationError):
    """Dataset or checkpoint schema error.

    Raised when a required column is missing, when two datasets (or a dataset
    and a checkpoint) do not share the same feature names, or when a named
    feature column does not exist.
    """

    category = "schema"


class ParseError(RELandValidationError):
    """Row-level parse error.

    Raised when a feature value is not a finite number or a label is not in
    {0, 1}. The offending 1-based data row is kept in ``row``.
    """

    category = "parse"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class UniquenessError(RELandValidationError):
    """Duplicate cell identifier in a dataset."""

    category = "uniqueness"


class DomainError(RELandValidationError):
    """Input outside the domain of an operation.

    NaN inputs to SparseMax, negative environment feature values, empty
    environments, single-class inputs to ranking metrics, and similar.
    """

    category = "domain"


class ConfigError(RELandValidationError):
    """Invalid configuration value or unknown configuration key."""

    category = "config"


class DimensionError(RELandValidationError):
    """Shape mismatch between arrays that must line up."""

    category = "dimension"


class UsageError(RELandValidationError):
    """Invalid command-line usage."""

    category = "usage"


# Runtime Exceptions
class OptimizerError(RELandRuntimeError):
    """Non-finite gradient reached the optimizer."""

    category = "optimizer"


class StateError(RELandRuntimeError):
    """Operation called on a model in the wrong state.

    Inference requires a frozen first-step mask, which is only set by
    finalization.
    """

    category = "state"


class DegenerateModelError(RELandRuntimeError):
    """Every decision step of the model outputs zero (dead network)."""

    category = "degenerate-model"


class SingularityError(RELandRuntimeError):
    """A kernel hit a singular point, e.g. a zero base raised to a negative power."""

    category = "singularity"


class TrainingError(RELandRuntimeError):
    """Training aborted on a non-finite loss.

    The epoch and batch where it happened are kept in ``epoch`` and ``batch``.
    """

    category = "training"

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DegenerateFieldError(RELandRuntimeError):
    """Constant score field; Moran's I is undefined when the variance is zero."""

    category = "degenerate-field"


class LeakageError(RELandRuntimeError):
    """A held-out test cell was used for training or checkpoint selection."""

    category = "leakage"
