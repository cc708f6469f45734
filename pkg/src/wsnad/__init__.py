"""Spatio-temporal anomaly detection for multi-node, multi-modal sensor telemetry.

The package is organised bottom-up: :mod:`wsnad.numeric` (float64 torch
substrate, seeded streams, gradient checks), :mod:`wsnad.data` (ingestion,
synthesis, injection, windows), :mod:`wsnad.temporal` and :mod:`wsnad.spatial`
(encoders), :mod:`wsnad.pretrain`, :mod:`wsnad.prompt`, :mod:`wsnad.detect`,
and the config-driven :mod:`wsnad.cli`.
"""

from .numeric import DTYPE, RngStream

__all__ = ["DTYPE", "RngStream"]
__version__ = "0.1.0"
