"""Exceptions raised by the mtvcbf package"""


class MtvCbfError(Exception):
    """Base class for all package errors"""


class DomainError(MtvCbfError, ValueError):
    """A quantity is outside the domain where a formula is defined"""


class RangeError(MtvCbfError, ValueError):
    """The learned margin was queried outside its trained range"""


class ModelFormatError(MtvCbfError, ValueError):
    """A model file could not be parsed"""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConfigError(MtvCbfError, ValueError):
    """A configuration value is missing or invalid"""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class TrainingError(MtvCbfError):
    """Training ended without reaching the validation target"""

    def __init__(self, message, train_mse, validation_mse, params=None):
        self.train_mse = train_mse
        self.validation_mse = validation_mse
        self.params = params
        super().__init__(
            f"{message} (train MSE {train_mse:.3e}, validation MSE {validation_mse:.3e})"
        )


class QpError(MtvCbfError):
    """The safety filter could not produce an input"""

    def __init__(self, message, partial_log=None):
        self.partial_log = partial_log
        super().__init__(message)
