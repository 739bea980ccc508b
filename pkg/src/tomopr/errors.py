"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad value, missing required key, unknown method."""


class ResourceLimitError(RuntimeError):
    """A requested computation would exceed a configured resource budget.

    The message always includes the estimated requirement so callers can
    adjust the budget or the problem size.
    """


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries epoch/batch diagnostics."""
