"""Exception taxonomy shared across the package.

Every error raised on purpose derives from CordonError and carries a short
machine-readable category used by the CLI for exit reporting.
"""


class CordonError(Exception):
    category = "internal"


class ConfigError(CordonError):
    """Invalid schema, ranges, or run configuration."""

    category = "config"


class ValidationError(CordonError):
    """A query or feature set does not match the schema it is used with."""

    category = "validation"


class FormatError(CordonError):
    """A persisted file is truncated, malformed, or of an unknown version."""

    category = "format"


class ShapeError(CordonError):
    """Tensor operands with incompatible shapes."""

    category = "shape"


class NumericError(CordonError):
    """Non-finite or out-of-domain numeric values."""

    category = "numeric"


class ApplicabilityError(CordonError):
    """A constraint or query transform was applied where it does not apply."""

    category = "applicability"


class GenerationError(CordonError):
    """Workload generation could not satisfy its configuration."""

    category = "generation"
