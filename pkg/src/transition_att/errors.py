"""Exception and warning classes raised across the package."""


class TransitionATTError(Exception):
    """Base class for every error raised by this package."""


class DataError(TransitionATTError, ValueError):
    """Input panel is malformed or violates a validation rule."""


class MissingColumn(DataError):
    pass


class UnbalancedPanel(DataError):
    pass


class DuplicateObservation(DataError):
    pass


class NonAbsorbingTreatment(DataError):
    pass


class UnknownLabel(DataError):
    pass


class InvalidPanel(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class LagExceedsHistory(DataError):
    pass


class EstimationError(TransitionATTError):
    """An estimator could not produce a value for the given data."""


class EmptyControlCell(EstimationError):
    """A treated history has no matching control units."""

    def __init__(self, history, message=None):
        self.history = tuple(history)
        super().__init__(message or f"no control units share history {self.history}")


class EmptyWeightedCell(EmptyControlCell):
    """A posterior-weighted denominator fell below the empty-cell threshold."""

    def __init__(self, history, arm, message=None):
        self.arm = arm
        super().__init__(
            history, message or f"weighted cell for history {tuple(history)} in arm {arm} is empty"
        )


class NoTreatedUnits(EstimationError):
    pass


class NoControlUnits(EstimationError):
    pass


class InsufficientPrePeriods(EstimationError):
    pass


class DimensionMismatch(EstimationError):
    pass


class AllStartsFailed(EstimationError):
    pass


class ReplicateFailed(EstimationError):
    pass


class TooManyFailures(EstimationError):
    pass


class InsufficientReplicates(EstimationError):
    pass


class EmptyControlSet(EstimationError):
    pass


class StaggeredAdoption(EstimationError):
    """A simultaneous-adoption estimator was called on staggered data."""


class EnumerationTooLarge(EstimationError):
    pass


class DegenerateCellWarning(UserWarning):
    """An M-step row had no weight and was replaced by the uniform row."""
