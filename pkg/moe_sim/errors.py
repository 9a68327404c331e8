"""Exception hierarchy shared by every moe-sim module."""

from typing import Any, Optional


class MoeSimError(Exception):
    """Base class for all moe-sim errors."""

    exit_code = 1


class ContractViolation(MoeSimError, ValueError):
    """An input violated a documented precondition (shape, dimension, range)."""


class ConfigError(MoeSimError):
    """The global configuration failed schema validation."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


class SolverError(MoeSimError):
    """Damped Newton did not reach the residual tolerance."""

    exit_code = 2

    def __init__(self, residual: float, iterations: int, finger: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        self.finger = finger
        where = f" (finger {finger})" if finger is not None else ""
        super().__init__(
            f"equilibrium did not converge after {iterations} iterations{where}: "
            f"residual {residual:.3e} N*m"
        )


class DatasetError(MoeSimError):
    """A binary artifact could not be read."""

    exit_code = 3


class BadMagicError(DatasetError):
    pass


class UnsupportedVersionError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class CollectionError(MoeSimError):
    """Sampler parameter ranges produced an unusable dataset."""

    exit_code = 3


class TrainingError(MoeSimError):
    """Training diverged."""

    exit_code = 4

    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class TaskAbort(MoeSimError):
    """A task stopped early; the partial result is attached."""

    exit_code = 5

    def __init__(self, result: Any, cause: Exception):
        self.result = result
        self.cause = cause
        super().__init__(f"task aborted: {cause}")
