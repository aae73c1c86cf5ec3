"""Exception types raised across the package."""


class ZbDetectError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ZbDetectError, ValueError):
    pass


class DomainError(ZbDetectError, ValueError):
    pass


class ZeroVectorRow(ZbDetectError, ValueError):
    """A row (or column) to be unit-normalized has (near-)zero norm."""


class ZeroFeature(ZbDetectError, ValueError):
    """A reduced feature column is (near-)zero, so its cosine is undefined."""


class NonFiniteLoss(ZbDetectError, FloatingPointError):
    pass


class Divergence(ZbDetectError, RuntimeError):
    """Training produced a non-finite loss."""


class DegenerateClass(ZbDetectError, ValueError):
    """A class has too few samples for an invertible covariance."""


class NotDetectable(ZbDetectError, RuntimeError):
    """The detector's TPR lower bound does not exceed its FPR upper bound."""


class MalformedRow(ZbDetectError, ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class ModelMismatch(ZbDetectError, ValueError):
    pass
