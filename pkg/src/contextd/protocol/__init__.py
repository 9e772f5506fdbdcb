"""Wire protocol between the orchestrator and VQA inference backends.

See PROTOCOL.md at the repository root for the normative description of
framing, message schemas, and the version string. This package provides the
message types and codec, a socket client and server, a deterministic mock
backend for tests, and the conformance suite any backend must pass.
"""

from .messages import (
    PROTOCOL_VERSION,
    AnswerItem,
    AskRequest,
    AskResponse,
    BackendDescriptor,
    ErrorMessage,
    HandshakeRequest,
    ImagePayload,
    Question,
    decode_message,
    encode_message,
)
from .client import BackendClient, open_backend
from .server import BackendServer
from .mock import GroundTruthStore, LatencyModel, MockBackend, NoiseModel, mock_answer
from .conformance import ConformanceReport, run_conformance

__all__ = [
    "PROTOCOL_VERSION",
    "AnswerItem",
    "AskRequest",
    "AskResponse",
    "BackendDescriptor",
    "ErrorMessage",
    "HandshakeRequest",
    "ImagePayload",
    "Question",
    "decode_message",
    "encode_message",
    "BackendClient",
    "open_backend",
    "BackendServer",
    "GroundTruthStore",
    "LatencyModel",
    "MockBackend",
    "NoiseModel",
    "mock_answer",
    "ConformanceReport",
    "run_conformance",
]
