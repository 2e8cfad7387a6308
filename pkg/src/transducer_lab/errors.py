"""Exception types shared across the library."""


class TransducerError(Exception):
    """Base class for all library errors."""


class DimensionError(TransducerError):
    """Shape or dimension mismatch between operands."""


class ConfigError(TransducerError):
    """Invalid configuration value."""


class InputError(TransducerError):
    """Invalid runtime input (bad token ids, too-short features, ...)."""


class NumericError(TransducerError):
    """An operation produced NaN/Inf, or probability mass underflowed."""


class GraphError(TransducerError):
    """Misuse of the differentiation graph (double backward, non-scalar root)."""
