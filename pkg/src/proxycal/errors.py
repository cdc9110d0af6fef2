"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``code`` used by the CLI to
print single-line failures and pick exit codes.
"""


class ProxycalError(Exception):
    code = "error"
    exit_code = 1


class ShapeError(ProxycalError, ValueError):
    """Array dimensions incompatible with the requested operation."""

    code = "shape-error"
    exit_code = 3


class SchemaError(ProxycalError, ValueError):
    """Dataset file or column layout violates the expected schema."""

    code = "schema-error"
    exit_code = 3


class DataError(ProxycalError, ValueError):
    """Malformed or degenerate values inside an otherwise well-formed file."""

    code = "data-error"
    exit_code = 3


class UnsupportedDatasetError(ProxycalError, ValueError):
    """Operation needs columns (e.g. ground truth) the dataset lacks."""

    code = "data-error"
    exit_code = 3


class ParameterError(ProxycalError, ValueError):
    """Invalid configuration or estimator parameters."""

    code = "parameter-error"
    exit_code = 3


class DegenerateBiasError(ProxycalError, ValueError):
    """Bias injection impossible, e.g. constant environment columns."""

    code = "degenerate-bias-error"
    exit_code = 3


class OverlapError(ProxycalError, ValueError):
    """Bias-score thresholding produced an empty treated or control group."""

    code = "overlap-error"
    exit_code = 3


class SupportError(ProxycalError, ValueError):
    """Conditioning event has zero probability in a discrete model."""

    code = "support-error"
    exit_code = 3


class TrainingDivergenceError(ProxycalError, RuntimeError):
    """Non-finite loss or gradient encountered during optimization."""

    code = "training-error"
    exit_code = 4
