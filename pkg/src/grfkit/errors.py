"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class GrfError(Exception):
    """Base class for every error raised by grfkit."""


class ConfigError(GrfError, ValueError):
    """Bad arguments, hyperparameters or run configuration."""


class DataError(GrfError):
    """Input data is missing, malformed or unusable."""


class NumericalError(GrfError, ArithmeticError):
    """A numerical routine failed or its result is undefined."""


# signal-core
class InvalidArgumentError(ConfigError):
    pass


class InvalidCutoffError(ConfigError):
    pass


class InsufficientSamplesError(DataError, ValueError):
    pass


class UnknownChannelError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown channel"


# alignment
class NoReferenceFoundError(DataError):
    pass


class DegenerateAnchorError(DataError):
    pass


class ImplausibleDriftError(DataError):
    pass


class EmptyOverlapError(DataError):
    pass


class NoStepsFoundError(DataError):
    pass


# dataset-io
class ManifestError(DataError):
    pass


class MissingFileError(DataError, FileNotFoundError):
    pass


class NonFiniteValueError(DataError, ValueError):
    pass


class RateMismatchError(DataError):
    pass


class RaggedRowsError(DataError):
    pass


class InsufficientPersonalDataError(DataError):
    pass


# ser / knn
class EmptyDesignError(DataError):
    pass


class InvalidRankError(ConfigError):
    pass


class InvalidKError(ConfigError):
    pass


class DimensionMismatchError(ConfigError):
    pass


class ConvergenceError(NumericalError):
    """Coordinate descent hit its sweep limit.

    The last iterate is kept on ``coef`` / ``intercept`` so callers can
    inspect how far it got.
    """

    def __init__(self, message, coef=None, intercept=None, sweeps=None):
        super().__init__(message)
        self.coef = coef
        self.intercept = intercept
        self.sweeps = sweeps


class IllConditionedEmbeddingError(NumericalError):
    pass


# biomech
class NoStanceError(DataError):
    pass


class TruncatedStanceError(DataError):
    pass


class StanceTooShortError(DataError):
    pass


# metrics
class ZeroRangeError(NumericalError):
    pass


class UndefinedMapeError(NumericalError):
    pass


# harness / cli
class UnimplementedMethodError(ConfigError):
    pass


class DegenerateFitWarning(UserWarning):
    """Regression fitted on a single row; the result is a trivial interpolant."""
