"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`FdfError`.
The CLI maps :class:`InputError` to exit code 2, :class:`EvaluationError` to 3
and :class:`ReportError` to 4.
"""


class FdfError(Exception):
    pass


class FdfWarning(UserWarning):
    """Recoverable data issue (dropped rows, excluded observations)."""


# -- input / schema ---------------------------------------------------------

class InputError(FdfError):
    pass


class MalformedRow(InputError):
    def __init__(self, row, reason, path=None):
        self.row = row
        self.reason = reason
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}row {row}: {reason}")


class UnknownRegion(InputError):
    def __init__(self, region, row=None, path=None):
        self.region = region
        self.row = row
        where = f"{path}: " if path else ""
        at = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}{at}unknown region {region!r}")


class NegativeCount(InputError):
    def __init__(self, count, row=None, path=None):
        self.count = count
        self.row = row
        where = f"{path}: " if path else ""
        at = f"row {row}: " if row is not None else ""
        super().__init__(f"{where}{at}negative count {count}")


class UnparseableDate(InputError):
    pass


class EmptyPeriodRange(InputError):
    pass


class EmptyRegistry(InputError):
    pass


class ColumnCollision(InputError):
    pass


class MissingAdjacency(InputError):
    pass


class ConfigError(InputError):
    pass


# -- flow aggregation -------------------------------------------------------

class IndexOutOfRange(FdfError, IndexError):
    pass


class NoFlows(FdfError):
    pass


# -- transforms / models ----------------------------------------------------

class NonInvertibleTransform(FdfError):
    pass


class LagShorterThanHorizon(FdfError, ValueError):
    def __init__(self, n, h):
        self.n = n
        self.h = h
        super().__init__(f"lag benchmark needs n >= h, got n={n}, h={h}")


class SingularSystem(FdfError):
    pass


class NotConverged(FdfError):
    def __init__(self, iterations, delta):
        self.iterations = iterations
        self.delta = delta
        super().__init__(f"no convergence after {iterations} iterations (last delta {delta:.3e})")


class Separable(FdfError):
    pass


class InsufficientRows(FdfError):
    pass


class CollinearDesign(FdfError):
    pass


# -- evaluation -------------------------------------------------------------

class EvaluationError(FdfError):
    pass


class TooFewPeriods(EvaluationError):
    pass


class LengthMismatch(EvaluationError, ValueError):
    pass


class EmptyInput(EvaluationError, ValueError):
    pass


class ZeroActualInMAPE(EvaluationError, ValueError):
    pass


class NoCommonSupport(EvaluationError):
    pass


class AllSpecsFailed(EvaluationError):
    pass


class EmptyTestPartition(EvaluationError):
    pass


class ReportError(FdfError):
    pass
