"""Exception hierarchy of the multiplication engine."""


class DbmmError(Exception):
    """Base class for every error raised by the engine."""


class DuplicateBlock(DbmmError):
    pass


class ShapeMismatch(DbmmError):
    pass


class IndexOutOfRange(DbmmError):
    pass


class OwnershipViolation(DbmmError):
    """A panel holds a block that the distribution assigns to another rank."""


class NonSquareGrid(DbmmError):
    pass


class PartitionMismatch(DbmmError):
    """Block partitions of the operands do not line up."""


class OffsetOutOfRange(DbmmError):
    pass


class PlanMismatch(DbmmError):
    """A panel does not fit the densification plan it is used with."""


class ResultTooLargeForReplication(DbmmError):
    pass


class Deadlock(DbmmError):
    """Every live rank is waiting on a message that can never arrive."""


class RankPanic(DbmmError):
    def __init__(self, rank: int, message: str):
        super().__init__(f"rank {rank} failed: {message}")
        self.rank = rank


class VerificationFailed(DbmmError):
    def __init__(self, max_error: float, tolerance: float):
        super().__init__(f"max relative error {max_error:.3e} exceeds {tolerance:.1e}")
        self.max_error = max_error
        self.tolerance = tolerance
