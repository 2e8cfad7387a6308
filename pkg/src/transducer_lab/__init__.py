"""Desk-scale neural transducer laboratory.

Exact transducer loss over the alignment lattice, a masked conformer
encoder, a relative-position predictor with segment memory, and a jointer
whose backward-flowing gradients can be rescaled per utterance to equalize
gradient variance across sequence lengths.
"""

from .errors import (ConfigError, DimensionError, GraphError, InputError,
                     NumericError, TransducerError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DimensionError", "GraphError", "InputError",
    "NumericError", "TransducerError",
]
