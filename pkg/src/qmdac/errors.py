"""Exception hierarchy shared by all solvers."""

import numpy as np


class SolverError(Exception):
    """Base class for every failure raised by this package.

    ``path`` records the position in a divide-and-conquer tree where the
    failure happened (``"r"`` is the root, ``"r.0"`` its first child, ...).
    """

    def __init__(self, message="", path=None, **info):
        super().__init__(message)
        self.path = path
        self.info = info

    def with_path(self, path):
        if self.path is None:
            self.path = path
        return self

    def __str__(self):
        msg = super().__str__()
        if self.path is not None:
            msg = f"{msg} [at {self.path}]"
        return msg


class DimensionMismatch(SolverError, ValueError):
    pass


class SingularPivot(SolverError, np.linalg.LinAlgError):
    pass


class SingularOperator(SingularPivot):
    pass


class SingularCoefficient(SingularPivot):
    pass


class SingularMassMatrix(SingularPivot):
    pass


class SingularShift(SingularPivot):
    pass


class SingularCapacitance(SingularPivot):
    pass


class SingularShiftedOperator(SingularPivot):
    pass


class SingularEigenbasis(SingularPivot):
    pass


class NoStabilizingSolution(SolverError):
    pass


class LyapunovSingular(SolverError):
    pass


class CompressedCareFailure(SolverError):
    pass


class SplitViolation(SolverError):
    pass


class LeafNotSplittable(SolverError):
    pass


class NotConverged(SolverError):
    """Iteration cap reached; ``best`` holds the last iterate and ``report``
    the solver diagnostics when available."""

    def __init__(self, message="", path=None, best=None, report=None, **info):
        super().__init__(message, path=path, **info)
        self.best = best
        self.report = report


class SdaNotConverged(NotConverged):
    pass


class CrNotConverged(NotConverged):
    pass


class MaxIterations(NotConverged):
    pass
