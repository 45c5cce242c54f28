"""Exception types shared across the package."""


class IPSDError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(IPSDError, ValueError):
    pass


class StateError(IPSDError, RuntimeError):
    """An object was used in a state that does not support the call."""


class TrainingDivergedError(IPSDError, ArithmeticError):
    """Denoiser training produced a non-finite loss.

    The partial trace is kept on ``.trace`` for inspection.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UpdateDivergedError(IPSDError, ArithmeticError):
    """A policy update produced non-finite gradients."""


class SignalFileError(IPSDError, OSError):
    """A signal file is missing or cannot be parsed."""


class ConfigError(IPSDError, ValueError):
    pass
