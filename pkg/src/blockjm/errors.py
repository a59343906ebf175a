"""Exception types shared across the package."""


class BlockJmError(Exception):
    """Base class for all package-specific errors."""


class SelfLoopError(BlockJmError):
    """A transition diagram contains a state that transitions to itself."""


class CyclicDiagramError(BlockJmError):
    """A transition diagram contains a directed cycle."""


class UnknownStateError(BlockJmError):
    """A transition references a state that was not declared."""


class NonPositiveSojournError(BlockJmError):
    """An extracted sojourn time is zero or negative."""


class NoImputableValueError(BlockJmError):
    """No measurement exists at or before block entry to carry forward."""


class NonFiniteError(BlockJmError):
    """A density, intensity or gradient evaluated to a non-finite value."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class InitializationFailedError(BlockJmError):
    """The sampler could not find a starting point with finite density."""


class AllDivergentError(BlockJmError):
    """More than 90% of post-warmup transitions diverged."""


class DegenerateTailError(BlockJmError):
    """All importance-weight tail values are equal; no Pareto fit possible."""


class SubjectMismatchError(BlockJmError):
    """Two pointwise log-likelihood sets refer to different subjects."""


class UnknownParameterError(BlockJmError):
    """A parameter selector matched nothing in the fitted block."""


class ConfigError(BlockJmError):
    """A run configuration failed schema validation."""
