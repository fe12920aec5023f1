"""Exception types shared across the package."""


class NtkLabError(Exception):
    pass


class DimensionMismatch(NtkLabError, ValueError):
    pass


class NotPositiveDefinite(NtkLabError, ArithmeticError):
    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class NoConvergence(NtkLabError, ArithmeticError):
    pass


class NotUnitNorm(NtkLabError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class Divergence(NtkLabError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NonFinite(NtkLabError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NegativeEigenvalue(NtkLabError, ValueError):
    pass


class DegenerateFit(NtkLabError, ValueError):
    pass


class EmptySelection(NtkLabError, ValueError):
    pass


class IdxFormatError(NtkLabError, ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class DimensionOverflow(IdxFormatError):
    pass
