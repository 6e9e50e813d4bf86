"""Shared exception types."""


class ConfigurationError(ValueError):
    """Raised when a field, grid, or solver configuration is invalid.

    Always raised before any model/field evaluation takes place.
    """
