"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, BackendError -> 2,
DataError -> 3.
"""

from __future__ import annotations


class WayfindError(Exception):
    """Base class for all package errors."""


class ConfigError(WayfindError):
    """Invalid configuration or command usage."""


class DataError(WayfindError):
    """Invalid or inconsistent input data (envs, episodes, manifests, traces)."""


class BackendError(WayfindError):
    """Failure in a model backend or its cache."""


class TransportError(BackendError):
    """HTTP transport failed after the retry budget."""


class EndpointError(BackendError):
    """The endpoint answered with an error status or a malformed body."""


class ReplayMissError(BackendError):
    """A replay-mode request has no matching cache entry."""

    def __init__(self, key: str, kind: str = ""):
        self.key = key
        self.kind = kind
        detail = f" ({kind})" if kind else ""
        super().__init__(f"replay miss{detail}: no cache entry for digest {key}")


class CacheConflictError(BackendError):
    """Two different responses were stored under the same cache key."""


class UnresolvableObservationError(BackendError):
    """An observation reference could not be resolved by the backend."""


class GenerationError(BackendError):
    """A backend returned empty or unusable generated content."""
