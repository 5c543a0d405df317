"""Exception types raised across the package."""


class ItepredError(Exception):
    """Base class for all package errors."""


# data / design
class MissingValue(ItepredError):
    pass


class NonBinary(ItepredError):
    pass


class SchemaMismatch(ItepredError):
    pass


class IndexOutOfRange(ItepredError):
    pass


class HierarchyViolation(ItepredError):
    pass


class LengthMismatch(ItepredError, ValueError):
    pass


class ColumnMismatch(ItepredError, ValueError):
    pass


# solvers
class SolverError(ItepredError):
    """A model fit failed."""


class Separation(SolverError):
    pass


class Singular(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class NegativeStatistic(ItepredError):
    pass


class DegenerateFold(SolverError):
    pass


class StrategyInfeasible(SolverError):
    pass


class NoRoot(ItepredError):
    pass


# evaluation
class TooFewSubjects(ItepredError):
    pass


class DegenerateNull(ItepredError):
    pass


class SingleClass(ItepredError):
    pass


class AllInBag(ItepredError):
    pass


class EmptyCell(ItepredError):
    pass


class StudyAborted(ItepredError):
    pass
