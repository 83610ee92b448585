"""Magnitude pruning and budgeted retraining toolkit.

Library surface: a small float64 network core (`nn`), step-indexed learning
rate schedules with retrain translations (`schedules`), magnitude-based mask
selection and sparsity schedules (`pruning`), stability/FLOP metrics
(`metrics`), end-to-end pipelines (`pipeline`), dataset ingestion (`data`),
config parsing (`config`), and a grid runner (`grid`). The `prunekit` CLI
wraps the lot.
"""

from . import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
