"""
Error types for DeGLIF.

Every error carries a machine-readable ``code`` (mirroring the
``{"error": CODE, "message": ...}`` envelope of the service layer) and the
process exit code the CLI maps it to: 1 for validation problems,
2 for runtime and numerical failures.
"""

from typing import Dict, Optional


class DeglifError(Exception):
    """Base class for all DeGLIF errors."""

    code: str = "INTERNAL_ERROR"
    exit_code: int = 2

    def __init__(self, message: str, details: Optional[Dict[str, str]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, object]:
        """Serialize to the standard error envelope."""
        return {"error": self.code, "message": self.message, "details": self.details}


class ValidationError(DeglifError):
    """Input or invariant violation."""

    code = "VALIDATION_ERROR"
    exit_code = 1


class GraphFormatError(ValidationError):
    """Malformed on-disk graph, reported with file and line."""

    code = "GRAPH_FORMAT_ERROR"

    def __init__(self, path: str, line: Optional[int], message: str):
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}", {"file": path, "line": str(line)})
        self.path = path
        self.line = line


class ScaleGuardError(ValidationError):
    """Oracle refused to run on a graph larger than the guard allows."""

    code = "SCALE_GUARD"


class NumericalError(DeglifError):
    """Divergence, non-finite iterate or failed influence solve."""

    code = "NUMERICAL_ERROR"
    exit_code = 2
