"""Exception taxonomy shared across the toolkit."""


class EgoExoError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(EgoExoError, ValueError):
    """A parameter is outside its documented domain."""


class NotFound(EgoExoError, LookupError):
    """A named resource (town, preset, backend) does not exist."""


class ConventionError(EgoExoError):
    """A pose with the wrong camera-axes convention was supplied."""


class ParseError(EgoExoError):
    """A file could not be parsed at all (malformed JSON, bad header)."""


class ValidationError(EgoExoError):
    """Structured content violates its schema or invariants.

    ``details`` lists the individual findings (strings or richer objects).
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = list(details) if details else []

    def __str__(self):
        if not self.details:
            return self.message
        shown = "; ".join(str(d) for d in self.details[:5])
        more = f" (+{len(self.details) - 5} more)" if len(self.details) > 5 else ""
        return f"{self.message}: {shown}{more}"


class StateError(EgoExoError):
    """An operation was issued against an object in the wrong state."""


class DegenerateGeometry(EgoExoError):
    """Input geometry admits no well-defined answer (coincident cameras...)."""


class SpawnError(EgoExoError):
    """An actor could not be placed without collision."""


class BackendUnavailable(EgoExoError):
    """The scene backend cannot be reached or is not installed."""


class VersionMismatch(BackendUnavailable):
    """The backend server/client versions are incompatible."""


class AlreadyExists(EgoExoError):
    """Refusing to overwrite existing non-empty output."""
