"""
Error codes and structured errors for latentflow.

Every failure raised by the toolkit is a LatentFlowError carrying a stable
code, a category and the process exit code the CLI should use.
"""

from enum import Enum
from typing import Optional, Dict, Any
from pydantic import BaseModel, ConfigDict


class ErrorCode(str, Enum):
    """Standardized error codes."""

    # Validation errors (exit 2)
    INVALID_ARGUMENT = "INVALID_ARGUMENT"
    SHAPE_MISMATCH = "SHAPE_MISMATCH"
    DOMAIN_ERROR = "DOMAIN_ERROR"
    UNSUPPORTED_CONDITION = "UNSUPPORTED_CONDITION"
    INVALID_CONFIG = "INVALID_CONFIG"
    INVALID_FORMAT = "INVALID_FORMAT"
    USAGE_ERROR = "USAGE_ERROR"

    # Numerical failures (exit 1)
    DIVERGENCE = "DIVERGENCE"
    TRAINING_DIVERGED = "TRAINING_DIVERGED"
    DEGENERATE_TRAJECTORY = "DEGENERATE_TRAJECTORY"
    ORACLE_CHECK_FAILED = "ORACLE_CHECK_FAILED"

    # Resource errors
    CHECKPOINT_NOT_FOUND = "CHECKPOINT_NOT_FOUND"

    UNKNOWN_ERROR = "UNKNOWN_ERROR"


class ErrorCategory(str, Enum):
    """Error categories for classification."""
    VALIDATION = "validation"      # bad inputs or configuration
    PROCESSING = "processing"      # numerical failure during a run
    RESOURCE = "resource"          # missing file or checkpoint
    SYSTEM = "system"


class ErrorDetail(BaseModel):
    """Detailed error information."""
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "code": "SHAPE_MISMATCH",
                "message": "x and eps must share a shape, got (4, 2) and (4, 3)",
                "category": "validation",
                "field": "eps",
                "details": {"expected": [4, 2], "provided": [4, 3]},
                "suggestion": "Draw eps with sample_noise(x.L, x.d, rng)"
            }
        }
    )

    code: ErrorCode
    message: str
    category: ErrorCategory
    field: Optional[str] = None
    details: Optional[Dict[str, Any]] = None
    suggestion: Optional[str] = None


class LatentFlowError(Exception):
    """
    Exception raised for every toolkit failure.

    Carries structured error information so the CLI can report it
    consistently and pick the right exit code.
    """

    def __init__(
        self,
        code: ErrorCode,
        message: str,
        category: ErrorCategory = ErrorCategory.SYSTEM,
        field: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
        suggestion: Optional[str] = None,
        exit_code: int = 1
    ):
        self.code = code
        self.message = message
        self.category = category
        self.field = field
        self.details = details or {}
        self.suggestion = suggestion
        self.exit_code = exit_code
        super().__init__(message)

    def to_detail(self) -> ErrorDetail:
        """Convert to ErrorDetail model."""
        return ErrorDetail(
            code=self.code,
            message=self.message,
            category=self.category,
            field=self.field,
            details=self.details,
            suggestion=self.suggestion
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for CLI error output."""
        return {
            "success": False,
            "error": self.to_detail().model_dump(mode="json", exclude_none=True)
        }


def validation_error(
    code: ErrorCode,
    message: str,
    field: Optional[str] = None,
    details: Optional[Dict[str, Any]] = None,
    suggestion: Optional[str] = None
) -> LatentFlowError:
    """Create a validation error (exit 2)."""
    return LatentFlowError(
        code=code,
        message=message,
        category=ErrorCategory.VALIDATION,
        field=field,
        details=details,
        suggestion=suggestion,
        exit_code=2
    )


def processing_error(
    code: ErrorCode,
    message: str,
    details: Optional[Dict[str, Any]] = None
) -> LatentFlowError:
    """Create a numerical processing error (exit 1)."""
    return LatentFlowError(
        code=code,
        message=message,
        category=ErrorCategory.PROCESSING,
        details=details,
        exit_code=1
    )


def resource_error(
    code: ErrorCode,
    message: str,
    field: Optional[str] = None,
    details: Optional[Dict[str, Any]] = None
) -> LatentFlowError:
    """Create a missing-resource error (exit 2, the input path is at fault)."""
    return LatentFlowError(
        code=code,
        message=message,
        category=ErrorCategory.RESOURCE,
        field=field,
        details=details,
        exit_code=2
    )


def usage_error(message: str, field: Optional[str] = None) -> LatentFlowError:
    """Create a CLI usage error naming the offending flag (exit 2)."""
    return LatentFlowError(
        code=ErrorCode.USAGE_ERROR,
        message=message,
        category=ErrorCategory.VALIDATION,
        field=field,
        exit_code=2
    )


def shape_mismatch(name: str, expected: tuple, provided: tuple) -> LatentFlowError:
    """Shorthand for the most common validation failure."""
    return validation_error(
        ErrorCode.SHAPE_MISMATCH,
        f"{name} has shape {tuple(provided)}, expected {tuple(expected)}",
        field=name,
        details={"expected": list(expected), "provided": list(provided)}
    )


ERROR_MESSAGES = {
    ErrorCode.INVALID_ARGUMENT: "Invalid argument",
    ErrorCode.SHAPE_MISMATCH: "Array shapes do not match",
    ErrorCode.DOMAIN_ERROR: "Argument outside the function domain",
    ErrorCode.UNSUPPORTED_CONDITION: "Condition not supported by this field",
    ErrorCode.INVALID_CONFIG: "Invalid configuration",
    ErrorCode.DIVERGENCE: "ODE state became non-finite",
    ErrorCode.TRAINING_DIVERGED: "Training produced a non-finite gradient",
    ErrorCode.DEGENERATE_TRAJECTORY: "Trajectory endpoints coincide",
    ErrorCode.ORACLE_CHECK_FAILED: "Monte-Carlo oracle check exceeded its tolerance",
    ErrorCode.INVALID_FORMAT: "Malformed input file",
    ErrorCode.USAGE_ERROR: "Invalid command-line usage",
    ErrorCode.CHECKPOINT_NOT_FOUND: "Checkpoint not found",
}


def get_error_message(code: ErrorCode, default: str = "An error occurred") -> str:
    """Get standard error message for error code."""
    return ERROR_MESSAGES.get(code, default)
