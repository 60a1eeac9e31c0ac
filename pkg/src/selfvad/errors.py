"""Exception types shared across the pipeline."""


class SelfVADError(Exception):
    """Base class for all library errors."""


class ConfigError(SelfVADError):
    """Invalid configuration: bad paths, unknown tasks/presets, inconsistent options."""


class ValidationError(SelfVADError):
    """Data that violates a documented invariant (shape mismatch, length mismatch, ...)."""


class AuxMissingError(SelfVADError):
    """A requested auxiliary input (detections / flow / teacher) is not on disk.

    Callers may catch this and fall back, e.g. skip flow-based detection.
    """


class UndefinedMetricError(SelfVADError):
    """Metric has no defined value for the given inputs (e.g. single-class AUC)."""
