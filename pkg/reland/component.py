"""
Module containing the base class for common behaviour across all reland components.
"""

from abc import ABC

import logging


class RELandComponent(ABC):
    """
    Base class providing the per-class logger and worker count shared by
    every component reachable from the :class:`reland.api.RELand` facade.
    """

    def __init__(self, log_level, jobs=1):
        self._logger = logging.getLogger(self.__class__.__name__)
        self._logger.setLevel(log_level)
        self._jobs = jobs
