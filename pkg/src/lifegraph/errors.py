"""Error taxonomy shared by the library and the CLI exit-code mapping."""


class ConfigError(ValueError):
    """Invalid configuration (CLI exit 1)."""


class MissingArtifactError(FileNotFoundError):
    """A stage's upstream artifact is absent (CLI exit 2)."""


class InvariantError(RuntimeError):
    """An internal consistency guarantee was violated (CLI exit 3)."""
