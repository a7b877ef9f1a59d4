"""Exception hierarchy shared across the toolkit."""


class ClbgmmError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ClbgmmError):
    """Bad input: malformed manifest, misaligned tables, invalid config."""


class NumericalError(ClbgmmError):
    """Numerical failure during model fitting or scoring."""
