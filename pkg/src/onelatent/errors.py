"""Error taxonomy shared across the pipeline."""

from .autograd import GraphError, NumericFault

__all__ = [
    "ContractViolation",
    "GraphError",
    "NumericFault",
    "SequenceOverflow",
    "StaleTargetError",
    "LineageError",
    "DependencyError",
    "CorruptSampleError",
    "RenderOverflow",
]


class ContractViolation(ValueError):
    """An operation was called outside its documented precondition."""


class SequenceOverflow(ContractViolation):
    """A sequence does not fit within the model's maximum context."""


class StaleTargetError(RuntimeError):
    """Target store metadata does not match the consuming model."""


class LineageError(RuntimeError):
    """Artifacts from different pipeline runs were mixed."""


class DependencyError(RuntimeError):
    """A required upstream artifact is missing."""

    def __init__(self, artifact: str, path: str):
        self.artifact = artifact
        self.path = path
        super().__init__(f"missing {artifact}: {path}")


class CorruptSampleError(RuntimeError):
    """A sample failed validation that should hold by construction."""


class RenderOverflow(RuntimeError):
    """Text cannot be placed on the canvas even at the fallback font size."""
