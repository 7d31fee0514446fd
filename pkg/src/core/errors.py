"""
Exception hierarchy shared by every package.

Strict-gate outcomes (exhausted backend calls, rejected candidates) are values,
not exceptions. These classes cover conditions the caller cannot continue past.
"""


class MaterializerError(Exception):
    """Base class for all errors raised by this project."""


class ConfigError(MaterializerError):
    """Inconsistent or out-of-range run configuration."""


class PromptRenderError(MaterializerError):
    """A template could not be rendered (missing placeholder, unknown template)."""


class GatewayExhaustedError(MaterializerError):
    """A backend call failed after all retries; raised by calls that return no result value."""


class SnapshotError(MaterializerError):
    """Persisted run state is missing, corrupt, or does not match the config."""


class EvidenceConfigurationError(MaterializerError):
    """No search backend in the configured chain is available."""


class ReferenceFetchError(MaterializerError):
    """Transport failure talking to the reference encyclopedia (distinct from a missing page)."""


class ClaimExtractionError(MaterializerError):
    """The judge could not produce a parseable claim list for an article."""


class AlignmentError(MaterializerError):
    """Two corpora do not cover the same subjects."""

    def __init__(self, message, only_in_a=(), only_in_b=()):
        super().__init__(message)
        self.only_in_a = list(only_in_a)
        self.only_in_b = list(only_in_b)


class BackendError(MaterializerError):
    """A generation or embedding backend call failed."""


class TransientBackendError(BackendError):
    """Worth retrying: timeouts, rate limits, 5xx replies."""


class PermanentBackendError(BackendError):
    """Retrying cannot help: bad request, authentication, unknown model."""
