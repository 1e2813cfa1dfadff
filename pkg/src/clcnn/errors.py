"""Exception types shared across the package.

Everything derives from ClcnnError so callers can catch the whole family;
the subclasses mirror the distinct failure modes of the numeric layer
(shape vs. symmetry vs. singularity) and of the pipeline (bad config,
divergent solves, violated closed-form identities).
"""


class ClcnnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ClcnnError, ValueError):
    """Dimensions of an input do not compose or do not match a contract."""


class SymmetryError(ClcnnError, ValueError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class SingularMatrixError(ClcnnError, ValueError):
    """A matrix required to be invertible is numerically singular."""


class DataError(ClcnnError, ValueError):
    """A dataset or sample collection is empty, too small, or malformed."""


class ConfigError(ClcnnError, ValueError):
    """A configuration value is out of its documented range."""


class BasisError(ClcnnError, ValueError):
    """A matrix expected to have orthonormal columns does not."""


class ConsistencyError(ClcnnError, ValueError):
    """A cached trajectory does not match the network it is used with."""


class DivergenceError(ClcnnError, RuntimeError):
    """An iterative solve produced a non-finite objective value."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite cost at iteration {iteration}")


class LemmaViolationError(ClcnnError, AssertionError):
    """A closed-form identity failed its numerical check."""


class InfeasibleError(ClcnnError, ValueError):
    """A requested construction has no solution (e.g. empty complement)."""


class StageError(ClcnnError, RuntimeError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
