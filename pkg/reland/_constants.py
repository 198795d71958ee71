"""
Constants for default values across the reland modules.
"""

from enum import Enum
import logging


# Default Config Items
RELAND_LOG_LEVEL = logging.CRITICAL
RELAND_VERSION = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1

# Required ingestion columns, in the order they are written back out
CELL_ID_COLUMN = "cell_id"
LON_COLUMN = "lon"
LAT_COLUMN = "lat"
MUNICIPALITY_COLUMN = "municipality"
DEPARTMENT_COLUMN = "department"
LABEL_COLUMN = "label"
REQUIRED_COLUMNS = [
    CELL_ID_COLUMN, LON_COLUMN, LAT_COLUMN, MUNICIPALITY_COLUMN, DEPARTMENT_COLUMN, LABEL_COLUMN
]

# Synthetic data
DEFAULT_ENV_FEATURE = "hist_mines_0.5km"
DEFAULT_SINGLE_FEATURE = "dist_hist_mine_km"
CELL_SIZE_M = 500
METERS_PER_DEGREE = 111320.0
SYNTHETIC_ORIGIN_LON = -75.5
SYNTHETIC_ORIGIN_LAT = 6.0
SYNTHETIC_DEPARTMENT = "Synthetic"
SYNTHETIC_HARD_REGION_FRACTION = 0.5
HARD_FRACTION_TOLERANCE = 0.1

# Numerical kernel
BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5
PROB_CLAMP = 1e-12
LOGIT_CLAMP = 30.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Model and training defaults
DEFAULT_STEPS = 1
DEFAULT_LATENT = 8
DEFAULT_GAMMA = -1.0
MLP_HIDDEN = 20
DEFAULT_EPOCHS = 500
DEFAULT_BATCH_SIZE = 2048
DEFAULT_BASE_LR = 0.01
DEFAULT_FINE_TUNE_LR = 0.05
DEFAULT_DECAY_FACTOR = 0.1
DEFAULT_DECAY_EVERY = 75
DEFAULT_WEIGHT_DECAY = 0.0005
DEFAULT_SEED = 0
DEFAULT_IRM_LAMBDA = 1.0
DEFAULT_PUSH_P = 4.0
DEFAULT_PUSH_P_LR = 2.0
DEFAULT_PUSH_LAMBDA = 1.0
HOLDOUT_FRACTION = 0.1

# Spatial
DEFAULT_PERMUTATIONS = 999
DEFAULT_ALPHA = 0.01
RISK_COLORMAP = "OrRd"


class Objective(Enum):
    """
    Training objectives. ``IRM`` adds the micro-batch environment penalty to
    the cross-entropy, ``PUSHED`` adds the p-push norm, ``IRM_PUSHED`` both.
    """

    ERM = "erm"
    IRM = "irm"
    PUSHED = "pushed"
    IRM_PUSHED = "irm-pushed"


class ModelKind(Enum):
    """
    Model families that can be trained and checkpointed.
    """

    RELAND = "reland"
    MLP = "mlp"
    LR = "lr"
    LR_SINGLE = "lr-single"


class Protocol(Enum):
    """
    Spatial validation protocols.
    """

    BLOCK_CV = "blockcv"
    BLOCK_V = "blockv"
    TRANSFER_CV = "transfercv"


class RemainderPolicy(Enum):
    """
    What happens to Easy samples left over after cutting Hard-sized micro-batches.
    """

    MERGE_INTO_LAST = "merge-into-last"
    DROP_REMAINDER = "drop-remainder"


class EnvironmentTag(Enum):
    """
    IRM environments. A cell is Easy when nearby historical events agree with
    its label, Hard otherwise.
    """

    EASY = "easy"
    HARD = "hard"


class ClusterClass(Enum):
    """
    Hazard cluster classes derived from the local Moran's I quadrant.
    """

    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    NOT_SIGNIFICANT = "not-significant"


class WeightsScheme(Enum):
    """
    Grid contiguity schemes for spatial weights.
    """

    QUEEN = "queen"
    ROOK = "rook"
