"""
Exception hierarchy shared by the loaders, numerical kernels and estimators
"""


class LcnetError(Exception):
    """Base class for every error raised by this package"""


class LoadError(LcnetError):
    """A file could not be parsed; message names the file and line"""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SchemaError(LcnetError):
    """Inconsistent dimensions across rows or files"""


class RangeError(LcnetError):
    """A value lies outside its admissible range"""


class ConfigError(LcnetError):
    """Invalid model specification or run configuration"""


class ContractError(LcnetError):
    """A caller broke a precondition (shapes, pins, missing responses)"""


class NumericDomainError(LcnetError):
    """Non-finite input or an argument outside a function's domain"""


class EstimationError(LcnetError):
    """Estimation failed (for example every restart aborted)"""
