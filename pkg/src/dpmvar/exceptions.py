"""Exceptions shared across the package."""


class ConfigError(ValueError):
    """A configuration field violates its documented invariant."""


class GenerationError(RuntimeError):
    """Synthetic-data generation could not produce a valid instance."""


class StateCorruptionError(RuntimeError):
    """Sampler state violates an internal invariant (e.g. gated-out unit)."""


class ChainNumericalError(RuntimeError):
    """A Gibbs sweep failed numerically; carries the failing sweep index."""

    def __init__(self, sweep: int, message: str = ""):
        self.sweep = sweep
        super().__init__(message or f"numerical failure in sweep {sweep}")
