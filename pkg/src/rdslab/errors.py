"""Exception hierarchy.  ``NumericalFailure`` subclasses map to CLI exit code 3."""


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class NumericalFailure(RuntimeError):
    """Base class for failures of a numerical stage."""


class DegenerateJacobian(NumericalFailure):
    pass


class NonConvergence(NumericalFailure):
    pass


class ConeViolation(NumericalFailure):
    pass


class NewtonDivergence(NumericalFailure):
    pass


class ChartOverflow(NumericalFailure):
    pass


class HypothesisFailure(NumericalFailure):
    """A precondition of the axis switch failed; ``which`` is 'i', 'ii.1', 'ii.2' or 'iii'."""

    def __init__(self, which, message):
        super().__init__(f"hypothesis ({which}) failed: {message}")
        self.which = which


class ReGraphFailure(NumericalFailure):
    pass


class NoAccumulation(NumericalFailure):
    pass


class SeparationFailure(NumericalFailure):
    pass


class MassStarvation(NumericalFailure):
    pass


class InsufficientMass(NumericalFailure):
    pass


class StepFailure(NumericalFailure):
    """Wraps a transform error with the index of the failing step."""

    def __init__(self, k, cause):
        super().__init__(f"step {k}: {type(cause).__name__}: {cause}")
        self.k = k
        self.cause = cause


class StackRejected(NumericalFailure):
    """Fewer than half of the leaves of a stack survived construction."""
