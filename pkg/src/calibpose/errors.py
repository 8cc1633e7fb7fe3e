"""Exception hierarchy shared by every module of the package."""


class PoseError(Exception):
    """Base class for all errors raised by calibpose."""


class DegenerateInputError(PoseError, ValueError):
    """Input is zero, empty or otherwise meaningless (zero polynomial, zero vector)."""


class DegenerateBaselineError(PoseError, ValueError):
    """Two cameras share an optical center, so epipolar geometry is undefined."""


class CheiralityError(PoseError):
    """A point lies on or behind a camera that is supposed to observe it."""


class IllConditionedError(PoseError):
    """Triangulation rays are too close to parallel."""


class DegenerateConfigurationError(PoseError):
    """Minimal-solver input is rank deficient (duplicate or collinear points)."""


class NoSolutionError(PoseError):
    """A minimal solver found no physically valid solution."""


class InsufficientDataError(PoseError, ValueError):
    """Fewer observations than the estimator's minimal sample size."""


class NoConsensusError(PoseError):
    """RANSAC did not find any model with enough support."""


class BootstrapFailure(PoseError):
    """The initial image pair could not be reconstructed."""


class RegistrationFailure(PoseError):
    """A new image could not be registered against the current model."""
