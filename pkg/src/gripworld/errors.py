"""Package exception types."""


class GripworldError(Exception):
    """Base class for package-specific failures."""


class SchemaError(GripworldError):
    """A serialized artifact has an unknown or malformed schema."""


class GenerationError(GripworldError):
    """Procedural generation could not satisfy its constraints."""


class InvalidActionError(GripworldError):
    """An action id outside the action set was submitted."""


class EpisodeDoneError(GripworldError):
    """step() was called on an episode that already terminated."""
