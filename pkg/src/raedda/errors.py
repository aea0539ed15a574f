"""Exception hierarchy shared by every module."""


class RaeddaError(Exception):
    """Base class for all package errors."""


class DegenerateCovariance(RaeddaError):
    """A covariance or scatter matrix is not positive definite."""


class EmptyInput(RaeddaError):
    """An operation received an empty collection."""


class EmptyComponent(RaeddaError):
    """A mixture component ended up with no effective weight."""


class ModelLatticeViolation(RaeddaError):
    """A discovery model is not reachable from the learning model."""


class InvalidConstraint(RaeddaError):
    """The eigenvalue-ratio bound is smaller than one."""


class ShapeError(RaeddaError):
    """Array dimensions are inconsistent."""


class InitializationFailure(RaeddaError):
    """Every random restart failed."""


class NumericalUnderflow(RaeddaError):
    """All component log-densities of a row are -inf."""


class SearchFailure(RaeddaError):
    """Every cell of a model-selection grid failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class GenerationFailure(RaeddaError):
    """Rejection sampling did not produce enough draws."""


class ParseError(RaeddaError):
    """A data or artifact file could not be parsed."""


class EmptyTrainingClass(RaeddaError):
    """The training data contain no labelled rows for some class."""


class ConfigError(RaeddaError):
    """Invalid configuration value."""


class SchemaVersionError(RaeddaError):
    """An artifact was written with an unsupported schema version."""
