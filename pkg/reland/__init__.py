# -*- coding: utf-8 -*-
"""reland Base Module

This module provides a landmine risk estimation toolkit: an interpretable
sparse-masked tabular network trained with Invariant Risk Minimization,
push-norm ranking losses, ranking metrics, spatial block validation protocols
and Local Moran's I hazard clustering.
"""

NAME = "reland"
