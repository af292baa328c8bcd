class ConfigError(ValueError):
    """Invalid or incompatible configuration."""


class GenerationError(RuntimeError):
    """The benchmark generator could not satisfy a constraint."""
