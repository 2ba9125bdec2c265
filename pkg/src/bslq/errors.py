"""Exception types shared across the package."""


class ScenarioError(ValueError):
    """A scenario file or builtin name could not be parsed or resolved."""


class SpecValidationError(ValueError):
    """A problem specification violates its structural invariants."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.violations))


class IntegrationError(RuntimeError):
    """An ODE integration produced a non-finite state."""


class SingularityError(RuntimeError):
    """A matrix that must be invertible is numerically singular."""


class PositivityError(RuntimeError):
    """A matrix that must be (semi)definite failed its eigenvalue check."""


class ReductionError(RuntimeError):
    """The control-weight block is not positive definite, so the
    cross-term elimination is not well defined."""


class SimulationError(RuntimeError):
    """A simulated trajectory blew up (non-finite state)."""
