"""Exception hierarchy shared across the package."""


class CribenchError(Exception):
    """Base class for all domain errors raised by this package."""


class EmptyPromptError(CribenchError):
    """Text is empty or whitespace-only after trimming."""


class InvalidRatioError(CribenchError):
    """Compression ratio outside (0, 1]."""


class SpanOutOfRangeError(CribenchError):
    """Segment span extends past the end of the prompt."""


class InvalidAnnotationError(CribenchError):
    """Segment weights do not sum to one."""


class ProfileIncompleteError(CribenchError):
    """Benchmark profile cannot produce a survival value for the request."""


class BackendError(CribenchError):
    """Base class for model backend failures."""


class TransientBackendError(BackendError):
    """Retryable failure (network, timeout, rate limit, 5xx)."""


class PermanentBackendError(BackendError):
    """Non-retryable failure (auth, malformed request, unexpected payload)."""


class ReplayMissError(BackendError):
    """Request digest not present in the replay archive."""

    def __init__(self, digest: str):
        super().__init__(f"no archived response for request digest {digest}")
        self.digest = digest


class InvalidParamsError(CribenchError):
    """Synthetic generator parameters violate their constraints."""


class ConfigError(CribenchError):
    """Experiment plan configuration is missing, malformed, or inconsistent."""


class InsufficientPromptsError(ConfigError):
    """Requested more prompts per cell than the dataset provides."""


class EmptyCellError(CribenchError):
    """No observations available for a cell summary."""


class InsufficientDataError(CribenchError):
    """Too few observations for the requested statistic."""


class DegenerateTestError(CribenchError):
    """Both samples have zero variance with unequal means."""


class UnidentifiableError(CribenchError):
    """Censored-normal fit impossible: every observation is censored."""


class ConvergenceFailureError(CribenchError):
    """Optimizer failed to reach the gradient tolerance."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class NoBreakpointError(CribenchError):
    """No candidate breakpoint has enough points on both sides."""


class InvalidWeightsError(CribenchError):
    """Mixture weights are negative or do not sum to one."""
