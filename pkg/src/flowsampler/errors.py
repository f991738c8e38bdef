"""Exception hierarchy shared by every flowsampler module."""

import numpy as np


class FlowSamplerError(Exception):
    """Base class for all package errors."""


class NumericalError(FlowSamplerError):
    """A computation broke down (non-SPD matrix, divergence, truncation...)."""


class DimensionError(FlowSamplerError, ValueError):
    pass


class UnsupportedOperationError(FlowSamplerError, NotImplementedError):
    pass


class SPDError(NumericalError, np.linalg.LinAlgError):
    """A matrix that must be symmetric positive definite is not."""


class PreconditionError(FlowSamplerError, ValueError):
    pass


class IntegrationError(NumericalError, RuntimeError):
    """Time integration gave up; ``last_state`` holds the last accepted state."""

    def __init__(self, message, last_state=None, t=None):
        super().__init__(message)
        self.last_state = last_state
        self.t = t


class DegenerateEnsembleError(NumericalError, ValueError):
    pass


class KernelError(NumericalError, ValueError):
    pass


class DivergenceError(NumericalError, FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class TruncationError(NumericalError, ValueError):
    pass


class ConfigError(FlowSamplerError, ValueError):
    pass


class FormatError(FlowSamplerError, ValueError):
    pass
