"""Reduced-order modelling of pulsatile channel flow: FV solver, FFD, POD and networks."""

from .exceptions import (ArtifactMismatchError, ConfigurationError, DegenerateReferenceError,
                         FieldFormatError, InvalidArgumentError, InvalidDeformationError,
                         OutOfDomainError, RomforgeError, SolverFailureError, StageError,
                         StepFailureError, TrainingDivergedError)
from .mesh import Field, StructuredMesh, WssField, build_channel_mesh, l2_norm, l2_relative_error

__version__ = "0.1.0"
