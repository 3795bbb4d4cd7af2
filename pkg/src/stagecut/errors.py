"""Exception types raised across the toolkit."""


class StagecutError(Exception):
    """Base class for toolkit errors."""


class DomainError(StagecutError, ValueError):
    """A time, SNR or noise level lies outside the schedule's domain."""


class FormatError(StagecutError, ValueError):
    """An input file does not follow the expected layout."""


class DegenerateKernelError(StagecutError, ValueError):
    """The perturbation kernel has zero noise, so the denoiser is undefined."""


class InfeasibleError(StagecutError, ValueError):
    """No candidate time satisfies a similarity constraint."""


class DegeneratePartitionError(StagecutError, ValueError):
    """Solved cut points are not strictly increasing."""


class NumericalBlowupError(StagecutError, ArithmeticError):
    """An integrator produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")
