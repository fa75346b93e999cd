"""Exception hierarchy shared by the solver, simulator and CLI."""


class LqmkvError(Exception):
    """Base class for all package errors."""


class DomainError(LqmkvError, ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class DegenerateGainError(LqmkvError):
    """A gain matrix lost positive definiteness during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class RiccatiBlowUpError(LqmkvError):
    """A Riccati integration produced non-finite values or a degenerate gain."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class HorizonLimitDivergenceError(LqmkvError):
    """The horizon-limit iteration did not settle before its cap."""


class InadmissibleAdjointError(LqmkvError):
    """The discounted adjoint is not integrable on the infinite horizon."""


class UnsupportedCouplingError(LqmkvError, NotImplementedError):
    """A random coefficient shares noise with the state in an unsupported way."""


class TruncationError(LqmkvError):
    """A truncated infinite-horizon integral has a tail above tolerance."""


class SimulationBlowUpError(LqmkvError):
    """Particle states became non-finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class AssumptionError(LqmkvError):
    """Standing assumptions fail and the caller did not opt in to solving anyway."""


class ScenarioError(LqmkvError, ValueError):
    """A scenario file violates the schema."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
