"""
Exception hierarchy shared by the pipeline modules.
"""

from typing import Any, Dict, Optional


class SidforgeError(Exception):
    """Base class for all sidforge errors."""


class EmptyDatasetError(SidforgeError):
    """Raised when filtering or ingest leaves no records to work with."""


class RowParseError(SidforgeError):
    """A single malformed row in a delimited check-in file."""

    def __init__(self, line: int, column: str, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column '{column}': {reason}")


class LeakageError(SidforgeError):
    """Raised when a feature would be computed from non-training data."""


class ZeroNormError(SidforgeError, ValueError):
    """Cosine similarity is undefined for a zero-norm vector."""


class DivergenceError(SidforgeError):
    """A training loop produced non-finite values."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} ({self.diagnostics})" if self.diagnostics else message)


class EncoderDivergedError(DivergenceError):
    """InfoNCE training hit a NaN/inf loss."""


class PolicyDivergedError(DivergenceError):
    """Toy policy logits became non-finite."""


class FrozenLayerError(SidforgeError):
    """Attempt to update the prototypes of a frozen SOM layer."""


class UnfrozenModelError(SidforgeError):
    """Quantization requested on a model with layers still training."""


class MissingArtifactError(SidforgeError):
    """An upstream artifact is missing."""

    def __init__(self, path: Any, producing_stage: str):
        self.path = path
        self.producing_stage = producing_stage
        super().__init__(
            f"Missing artifact {path}; run the '{producing_stage}' stage first"
        )


class DigestMismatchError(SidforgeError):
    """An upstream artifact was produced under a different configuration."""

    def __init__(self, path: Any, expected: str, found: str):
        self.path = path
        self.expected = expected
        self.found = found
        super().__init__(
            f"Artifact {path} was produced with config digest {found[:12]}, "
            f"current config is {expected[:12]} (use --force to accept)"
        )
