from typing import List, Optional


class SimulatorError(Exception):
    """Base class for every error raised by the simulator."""


class ManifoldDomainError(SimulatorError, ValueError):
    """Input outside the domain of an operation (sigma <= 0, bad step, bad window...)."""


class ConfigError(SimulatorError, ValueError):
    """Experiment configuration failed validation."""


class ConvergenceError(SimulatorError, ArithmeticError):
    """
    An iterative or stochastic computation did not reach its tolerance.
    Carries the last residual so callers can report how far off it was.
    """

    def __init__(
        self,
        message: str,
        residual: Optional[float] = None,
        iterations: Optional[int] = None,
        std_error: Optional[float] = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.std_error = std_error


class VerificationError(SimulatorError):
    """One or more oracle cross-checks failed."""


def error_chain(exc: BaseException) -> List[str]:
    """Flattens an exception and its causes into 'Type: message' strings."""
    chain = []
    seen = set()
    current: Optional[BaseException] = exc
    while current is not None and id(current) not in seen:
        seen.add(id(current))
        chain.append(f"{type(current).__name__}: {current}")
        current = current.__cause__ or current.__context__
    return chain
