"""Exception hierarchy shared by all modules."""


class MBOError(Exception):
    """Base class for every error raised by this package."""


# --- surface tensions ---------------------------------------------------

class TensionError(MBOError, ValueError):
    pass


class NotSymmetric(TensionError):
    pass


class NonzeroDiagonal(TensionError):
    pass


class NonpositiveOffDiagonal(TensionError):
    pass


class TriangleInequalityViolated(TensionError):
    """sigma[i, j] >= sigma[i, k] + sigma[k, j]; indices are 1-based."""

    def __init__(self, i, j, k, slack=None):
        self.i, self.j, self.k = i, j, k
        self.slack = slack
        msg = f"strict triangle inequality violated for (i, j, k) = ({i}, {j}, {k})"
        if slack is not None:
            msg += f", slack = {slack:.3g}"
        super().__init__(msg)


class NotConditionallyNegativeDefinite(TensionError):
    pass


class NoSolution(TensionError):
    pass


# --- fields -------------------------------------------------------------

class NonpositiveVariance(MBOError, ValueError):
    pass


class GridMismatch(MBOError, ValueError):
    pass


class PhaseOutOfRange(MBOError, IndexError):
    pass


class SnapshotFormatError(MBOError, ValueError):
    pass


# --- scheme / diagnostics -----------------------------------------------

class TooLargeForBruteForce(MBOError, ValueError):
    pass


class OracleMismatch(MBOError, AssertionError):
    pass


class UnresolvedScale(MBOError, ValueError):
    pass


class NotATripleJunction(MBOError, ValueError):
    pass


# --- harness ------------------------------------------------------------

class ParseError(MBOError, ValueError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class ValidationError(MBOError, ValueError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")
