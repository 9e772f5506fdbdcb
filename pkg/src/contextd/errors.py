"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new exceptions should
subclass the family that matches how an operator would triage them:
configuration problems, bad data, or a misbehaving backend.
"""

from __future__ import annotations


class ContextdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ContextdError):
    """Invalid or unresolvable application configuration."""


class DataError(ContextdError):
    """Malformed, inconsistent, or missing dataset content."""


class UnknownContextError(DataError):
    """A context id or question string that is not in the taxonomy."""


class MissingTruthError(DataError):
    """A ground-truth record lacks the bit required to answer a query."""


class ProtocolError(ContextdError):
    """A wire message violated the backend protocol schema or version."""


class CapabilityError(ContextdError):
    """The requested mode is not supported by the backend's descriptor."""


class TransportError(ContextdError):
    """A backend could not be reached or did not reply in time.

    ``failed_query_ids`` lists the queries that never got an answer and
    ``partial`` carries whatever results were collected before the failure,
    so callers can salvage a partial pass.
    """

    def __init__(self, message, failed_query_ids=(), partial=None):
        super().__init__(message)
        self.failed_query_ids = list(failed_query_ids)
        self.partial = partial if partial is not None else {}


class BackendTimeoutError(TransportError):
    """A backend call exceeded its deadline and was cancelled."""
