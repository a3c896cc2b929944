"""Exception types shared across the package."""


class TemplabError(Exception):
    """Base class for all package-specific errors."""


class CapabilityError(TemplabError):
    """A request exceeds a hard build limit (e.g. maximum jet depth)."""


class NumericalError(TemplabError):
    """A computation produced non-finite intermediates."""


class ConfigError(TemplabError):
    """Invalid configuration or precondition violation detected before numerics."""
