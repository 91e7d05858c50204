"""Exception types shared by the library and the command line runner."""


class DomainError(ValueError):
    """Arguments outside the domain of an operation."""


class CapacityError(RuntimeError):
    """Input is valid but exceeds a documented size or cost limit."""


class ConfigError(ValueError):
    """Malformed experiment configuration (bad flag, bad file, bad grammar)."""
