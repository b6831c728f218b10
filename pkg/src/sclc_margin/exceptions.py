"""Exception hierarchy shared by the analysis modules."""


class SclcError(Exception):
    """Base class; ``stage`` is filled in by the example pipeline."""

    stage: str | None = None


class ConfigError(SclcError):
    """Invalid example configuration or user input."""


class ModelError(SclcError):
    """Plant or controller violates a structural requirement."""


class AnalysisError(SclcError):
    """A numerical analysis step could not produce a result."""


class PoleOnGrid(AnalysisError):
    """Frequency evaluation hit an imaginary-axis pole."""


class SynthesisError(AnalysisError):
    """No stabilizing design exists for the requested data."""


class ConditioningError(AnalysisError):
    """A solver result fails its residual check."""
