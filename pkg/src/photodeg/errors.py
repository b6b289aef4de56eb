"""Exception hierarchy."""


class PhotodegError(Exception):
    """Base class for all package errors."""


class DomainError(PhotodegError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateInputError(PhotodegError, ValueError):
    """Input carries no usable information (all-zero curve, empty design...)."""


class ExtrapolationError(PhotodegError, ValueError):
    """Requested time lies outside the recorded range."""


class ConfigurationError(PhotodegError, ValueError):
    """Inconsistent run or binning configuration."""


class MissingDataError(PhotodegError, ValueError):
    """Covariate series still contains gaps where none are allowed."""


class ImputationError(MissingDataError):
    """No donor observations were available for some missing values."""

    def __init__(self, message, timestamps=()):
        super().__init__(message)
        self.timestamps = list(timestamps)


class RankDeficiencyError(PhotodegError, ValueError):
    """Model is not identifiable from the supplied data."""


class ConvergenceError(PhotodegError, RuntimeError):
    """Optimizer failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class DegeneratePredictionError(PhotodegError, ValueError):
    """Predictions carry no signal for random-effect estimation."""


class ValidationError(PhotodegError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line
