"""Exception types shared across the package."""


class VFDError(Exception):
    """Base class for all errors raised by :mod:`vfd`."""


class ParameterOutOfRange(VFDError, ValueError):
    pass


class NonPositiveProfile(VFDError):
    """Profile integration produced f <= 0; the radial step is too large."""


class TailNotResolved(VFDError):
    """Analytic tail exceeds 5% of the grid quadrature; r_max is too small."""


class TimeBeyondExtinction(VFDError, ValueError):
    pass


class OutOfInterval(VFDError, ValueError):
    pass


class GridMismatch(VFDError, ValueError):
    pass


class DecayHypothesisViolated(UserWarning):
    """Input does not satisfy |f(x)| <= C|x|^(1/m) beyond R0 (warning only)."""


class NonPositiveInitial(VFDError, ValueError):
    pass


class NewtonDiverged(VFDError):
    pass


class PositivityLost(VFDError):
    pass


class ExtinctionReached(VFDError):
    """Raised only on request; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class WindowOutsideDomain(VFDError, ValueError):
    pass


class NotNearExtinction(VFDError):
    pass


class ProbeInsideWindow(VFDError, ValueError):
    pass


class HypothesisViolated(VFDError, ValueError):
    pass


class ParseError(VFDError, ValueError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(VFDError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key} {message}")
        self.key = key
