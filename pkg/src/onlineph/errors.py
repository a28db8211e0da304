"""Exception types raised across the package."""


class OnlinePHError(ValueError):
    """Base class for all domain errors."""


class InvalidInputError(OnlinePHError):
    pass


class DegenerateBlockError(OnlinePHError):
    """A block (or dataset) without any observed event."""


class EmptyRiskSetError(OnlinePHError):
    pass


class InvalidTimeError(OnlinePHError):
    pass


class SingularInformationError(OnlinePHError):
    pass


class SeparationError(OnlinePHError):
    """Newton iterates diverged, typically monotone likelihood."""


class SingularHError(OnlinePHError):
    pass


class CheckpointError(OnlinePHError):
    pass
