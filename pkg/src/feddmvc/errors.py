"""Exception hierarchy shared across the package."""


class FedDMVCError(Exception):
    """Base class for every error raised by this package."""


class ContractError(FedDMVCError, ValueError):
    """An argument violates a shape or range precondition."""


class SingularMatrixError(FedDMVCError, ArithmeticError):
    pass


class DegenerateRowError(FedDMVCError, ValueError):
    def __init__(self, row: int, msg: str | None = None):
        self.row = row
        super().__init__(msg or f"row {row} has zero mass and cannot be normalized")


class DivergenceError(FedDMVCError, ArithmeticError):
    def __init__(self, msg: str, step: int | None = None):
        self.step = step
        if step is not None:
            msg = f"{msg} (step {step})"
        super().__init__(msg)


class InsufficientPointsError(FedDMVCError, ValueError):
    pass


class AlignmentError(FedDMVCError):
    """A client shares no samples with the anchor, so labels cannot be matched."""


class IndicatorError(FedDMVCError, ValueError):
    """A sample is present in no view."""


class NoOverlapError(FedDMVCError):
    """No sample is present in every view, so prototypes are undefined."""


class OrderingError(FedDMVCError, RuntimeError):
    pass


class MissingSampleError(FedDMVCError, KeyError):
    pass


class DeserializationError(FedDMVCError, ValueError):
    def __init__(self, msg: str, offset: int):
        self.offset = offset
        super().__init__(f"{msg} at offset {offset}")


class DatasetError(FedDMVCError, ValueError):
    """Malformed dataset directory, file or row."""


class StageError(FedDMVCError):
    """Wraps a failure inside a federated run with the epoch and stage it hit."""

    def __init__(self, epoch: int, stage: str, cause: BaseException):
        self.epoch = epoch
        self.stage = stage
        self.cause = cause
        super().__init__(f"epoch {epoch}, stage {stage!r}: {type(cause).__name__}: {cause}")
