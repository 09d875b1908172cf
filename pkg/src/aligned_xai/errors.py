"""Exception hierarchy shared by all toolkit modules.

Every error carries a short machine-parseable ``error_class`` token that the
CLI prints as a single line (``error: <class>: <message>``).
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    error_class = "toolkit-error"
    exit_code = 1


class ConfigError(ToolkitError):
    """Invalid configuration values (dimensions, fractions, missing inputs)."""

    error_class = "config-error"
    exit_code = 2


class PrerequisiteError(ToolkitError):
    """A pipeline stage was invoked before the stage it depends on."""

    error_class = "prerequisite-error"
    exit_code = 2


class ParseError(ToolkitError):
    """Malformed on-disk manifest content; message names the offending line."""

    error_class = "parse-error"
    exit_code = 2


class FormatError(ToolkitError):
    """Malformed binary container; message names the byte offset."""

    error_class = "format-error"
    exit_code = 3


class ContractError(ToolkitError):
    """Caller violated a documented call contract (shapes, stale cache)."""

    error_class = "contract-error"
    exit_code = 3


class EmptyInputError(ToolkitError):
    """An operation that needs at least one element received none."""

    error_class = "empty-input-error"
    exit_code = 3


class DegenerateInputError(ToolkitError):
    """Input is technically well-formed but makes the result undefined."""

    error_class = "degenerate-input-error"
    exit_code = 3


class NumericError(ToolkitError):
    """Non-finite values appeared where finite ones are required."""

    error_class = "numeric-error"
    exit_code = 3


class MetricError(ToolkitError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""

    error_class = "metric-error"
    exit_code = 3


class TrainingError(ToolkitError):
    """Training diverged; message carries epoch/step context."""

    error_class = "training-error"
    exit_code = 3
