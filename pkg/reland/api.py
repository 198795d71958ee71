"""
Module for the container class of all reland components.
"""

import logging

from ._constants import RELAND_LOG_LEVEL, RELAND_VERSION
from .exceptions import ConfigError

from .dataset import RELandDatasets
from .protocols import RELandProtocols
from .spatial import RELandSpatial
from .trainer import RELandTrainer


class RELand():
    """
    Super class for access to all reland components.
    """

    # Which class backs each attribute of this class; all components share the
    # same initialization values.
    _class_for_attr_dict = {
        "datasets": RELandDatasets,
        "trainer": RELandTrainer,
        "protocols": RELandProtocols,
        "spatial": RELandSpatial,
    }

    def __init__(self, log_level=RELAND_LOG_LEVEL, jobs=1):
        if jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {jobs}")

        self._logger = logging.getLogger(self.__class__.__name__)
        self._log_level = log_level
        self._logger.setLevel(self._log_level)
        self._jobs = jobs

        self._logger.debug("Initializing the RELand class...")

        self.__version__ = RELAND_VERSION
        self.version = RELAND_VERSION

        self.datasets: RELandDatasets = None
        self.trainer: RELandTrainer = None
        self.protocols: RELandProtocols = None
        self.spatial: RELandSpatial = None

        self._initialize_components()

    def _initialize_components(self):
        for attr_name, class_for_attr in self._class_for_attr_dict.items():
            setattr(self, attr_name, class_for_attr(self._log_level, self._jobs))
        self._logger.debug("RELand class initialized.")

    def set_jobs(self, jobs):
        """
        Change the number of concurrent workers; the components are rebuilt.
        """
        if jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {jobs}")
        self._jobs = jobs
        self._initialize_components()
