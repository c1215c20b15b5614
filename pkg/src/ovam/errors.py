"""Exception types shared across the package."""


class OvamError(Exception):
    """Base class for all errors raised by this package."""


class BackendUnavailableError(OvamError):
    """A denoiser backend could not be loaded or is not installed."""


class PromptTooLongError(OvamError):
    """The prompt encodes to more tokens than the backend supports."""


class PartialTraceError(OvamError):
    """A capture hook failed; names the missing (block, timestep) pairs."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"trace capture incomplete, missing: {self.missing}")


class TraceFormatError(OvamError):
    """A persisted trace directory is malformed or inconsistent."""


class DimensionMismatchError(OvamError):
    """Two arrays that must agree in shape do not."""


class NumericInputError(OvamError):
    """An input array contains NaN or Inf."""


class EmptySelectionError(OvamError):
    """A block/timestep/head selection resolved to the empty set."""


class ConfigurationError(OvamError):
    """A configuration value is invalid or inconsistent with the trace."""


class DivergenceError(OvamError):
    """Optimization produced a non-finite loss.

    Carries the last finite state so callers can inspect or salvage it.
    """

    def __init__(self, message, partial_result=None):
        self.partial_result = partial_result
        super().__init__(message)


class ScorerUnavailableError(OvamError):
    """An image-text similarity scorer was requested but cannot run."""
