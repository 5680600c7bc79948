"""Error types raised across the toolkit.

Every error carries a stable ``token`` (printed on the last stderr line by the
CLI) and the process ``exit_code`` it maps to: 2 for usage and validation
problems, 1 for runtime failures.
"""
from typing import Any, Dict


class WildxaiError(Exception):
    """Base class for all toolkit errors."""

    token: str = "error"
    exit_code: int = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        return self.message


# Data pipeline

class SchemaError(WildxaiError):
    token = "schema-error"
    exit_code = 2


class CsvParseError(WildxaiError):
    token = "parse-error"
    exit_code = 2


class WindowValidationError(WildxaiError):
    token = "validation-error"
    exit_code = 2


class UnimputableFeatureError(WildxaiError):
    token = "unimputable-feature"
    exit_code = 2


class MissingCalendarError(WildxaiError):
    token = "missing-calendar"
    exit_code = 2


class EmptyInputError(WildxaiError):
    token = "empty-input"
    exit_code = 2


# Predictors

class DegenerateTrainingError(WildxaiError):
    token = "degenerate-training"


class DivergenceError(WildxaiError):
    token = "divergence"


class ShapeMismatchError(WildxaiError):
    token = "shape-mismatch"
    exit_code = 2


class TransportError(WildxaiError):
    token = "transport-error"


class ModelFormatError(WildxaiError):
    token = "model-format"
    exit_code = 2


# Explainers

class EnumerationLimitError(WildxaiError):
    token = "enumeration-limit"
    exit_code = 2


class RankError(WildxaiError):
    token = "rank-deficient"


class InsufficientSamplesError(WildxaiError):
    token = "insufficient-samples"
    exit_code = 2


class KernelWidthError(WildxaiError):
    token = "kernel-width"
    exit_code = 2


# Analytics, rendering, studies

class EmptyCohortError(WildxaiError):
    token = "empty-cohort"


class MixedAttributionsError(WildxaiError):
    token = "mixed-attributions"
    exit_code = 2


class UnknownFeatureError(WildxaiError):
    token = "unknown-feature"
    exit_code = 2


class RankingError(WildxaiError):
    token = "ranking-error"
    exit_code = 2


class RenderError(WildxaiError):
    token = "render-error"


class StudyError(WildxaiError):
    token = "study-error"
    exit_code = 2


class ConfigError(WildxaiError):
    token = "config-error"
    exit_code = 2


class UsageError(WildxaiError):
    token = "usage-error"
    exit_code = 2
