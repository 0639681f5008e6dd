"""Shared exception types."""


class ValidationError(ValueError):
    """Bad user-supplied input: config values, file contents, or arguments."""


class CorpusSpecError(ValidationError):
    """Synthetic corpus spec violates its invariants."""


class ManifestError(ValidationError):
    """Manifest file cannot be parsed or fails integrity checks."""


class ConfigError(ValidationError):
    """Config file has unknown keys or unparsable values."""
