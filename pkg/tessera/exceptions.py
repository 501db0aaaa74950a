"""Error types raised across the simulation package."""


class TesseraError(Exception):
    """Base class for every error raised by tessera."""


class DomainError(TesseraError, ValueError):
    """A coordinate, parameter or precondition lies outside its domain."""


class EmptyProcessError(TesseraError):
    """A query needs at least one seed but the process is empty."""


class ConfigError(TesseraError):
    """Experiment configuration failed validation."""


class CensoringError(TesseraError):
    """Too many origin clusters reached the simulation window boundary."""

    def __init__(self, message: str, window_scale: float, censored_fraction: float):
        super().__init__(message)
        self.window_scale = window_scale
        self.censored_fraction = censored_fraction


class AcceptanceError(TesseraError):
    """An experiment run with --check did not meet its acceptance criterion."""
