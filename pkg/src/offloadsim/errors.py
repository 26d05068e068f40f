"""Exception hierarchy shared across the simulator."""


class OffloadSimError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(OffloadSimError, ValueError):
    """Invalid configuration value or document."""


class DomainError(OffloadSimError, ValueError):
    """Argument outside the mathematical domain of a model function."""


class DegenerateLinkError(DomainError):
    """A link whose Shannon rate is zero cannot carry a payload."""


class ProtocolError(OffloadSimError, RuntimeError):
    """An operation was invoked in a state where it is not allowed."""


class DecodeError(OffloadSimError, ValueError):
    """A wire document failed schema or semantic validation.

    ``path`` locates the offending field, e.g. ``subtasks/1/dependencies``.
    """

    def __init__(self, message, path=""):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class BackendError(OffloadSimError, RuntimeError):
    """The external planner backend could not produce a usable plan."""
