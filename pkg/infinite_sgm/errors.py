import numpy as np


class DimensionError(ValueError):
    """Grid or shape mismatch between operands, or an index outside the grid."""


class SingularOperatorError(np.linalg.LinAlgError):
    """An operator has no retained spectrum, or a Gram/innovation matrix is singular."""


class NumericalError(FloatingPointError):
    """Non-finite values in a drift, loss or simulated path."""


class UnreliableEstimateError(RuntimeError):
    """A Monte-Carlo estimate rests on too few effective samples."""


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""
