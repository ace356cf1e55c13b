"""Named error types shared across the package.

Every error carries a stable kebab-case ``code`` so the CLI can report
failures in a machine-greppable form (``fedsc: <code>: message``).
"""

from __future__ import annotations


class FedscError(Exception):
    """Base class for all package errors."""

    code = "error"


class InvalidArgumentError(FedscError, ValueError):
    code = "invalid-argument"


class DimensionMismatchError(FedscError, ValueError):
    code = "dimension-mismatch"


class ShapeMismatchError(FedscError, ValueError):
    code = "shape-mismatch"


class MalformedHeaderError(FedscError, ValueError):
    code = "malformed-header"


class TruncatedFileError(FedscError, ValueError):
    code = "truncated-file"


class NonfiniteGradientError(FedscError, FloatingPointError):
    code = "nonfinite-gradient"


class DegeneratePrototypeError(FedscError, ValueError):
    code = "degenerate-prototype"


class ClassUnsupportedError(FedscError, ValueError):
    code = "class-unsupported"


class EmptyClientError(FedscError, ValueError):
    code = "empty-client"


class EmptyFeatureSetError(FedscError, ValueError):
    code = "empty-feature-set"


class DegenerateVectorError(FedscError, ValueError):
    code = "degenerate-vector"


class NoPositivePrototypeError(FedscError, ValueError):
    code = "no-positive-prototype"


class NoNegativePrototypeError(FedscError, ValueError):
    code = "no-negative-prototype"


class LabelOutOfRangeError(FedscError, ValueError):
    code = "label-out-of-range"


class EmptyDatasetError(FedscError, ValueError):
    code = "empty-dataset"


class InvalidConstantsError(FedscError, ValueError):
    code = "invalid-constants"


class NoFeasibleRateError(FedscError, ValueError):
    code = "no-feasible-rate"


class InfeasibleConfigurationError(FedscError, ValueError):
    code = "infeasible-configuration"


class InsufficientTraceError(FedscError, ValueError):
    code = "insufficient-trace"


class InvalidConfigError(FedscError, ValueError):
    code = "invalid-config"


class MalformedCsvError(FedscError, ValueError):
    code = "malformed-csv"
