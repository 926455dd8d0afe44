"""Exception hierarchy shared across romforge."""


class RomforgeError(Exception):
    """Base class for all romforge errors."""


class InvalidArgumentError(RomforgeError, ValueError):
    pass


class DegenerateReferenceError(RomforgeError, ZeroDivisionError):
    pass


class FieldFormatError(RomforgeError, ValueError):
    """Malformed, truncated or inconsistent field/container file."""


class OutOfDomainError(RomforgeError, ValueError):
    pass


class InvalidDeformationError(RomforgeError):
    """Deformed mesh has tangled (non-positive volume) cells."""


class ConfigurationError(RomforgeError, ValueError):
    pass


class SolverFailureError(RomforgeError):
    """Linear solver did not converge; carries the residual history."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class StepFailureError(RomforgeError):
    """A time step violated the divergence tolerance or failed to solve."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class TrainingDivergedError(RomforgeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ArtifactMismatchError(RomforgeError):
    """Stored artifacts do not belong to the requested mesh/configuration."""


class StageError(RomforgeError):
    """Error raised inside a pipeline stage, tagged with that stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
