"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid scenario, profile, or run configuration."""


class WeightsFormatError(ValueError):
    """Weights file is malformed, truncated, or from an incompatible version."""


class EpisodeFinishedError(RuntimeError):
    """``step`` was called on an environment whose episode has ended."""
