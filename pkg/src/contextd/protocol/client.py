"""Socket client for the backend protocol, plus the endpoint factory.

One connection multiplexes concurrent requests: a receiver thread matches
responses to callers by request id, so ``ask`` is safe to call from several
threads at once. A call that misses its deadline raises, and is reported,
never silently dropped.

Endpoints:
  ``host:port`` or ``tcp:host:port``  TCP backend
  ``unix:/path/to.sock``              Unix-domain backend
  ``mock:/path/truth.jsonl?seed=0&flip=0.05&...``  in-process mock backend
"""

from __future__ import annotations

import socket
import threading
from typing import Optional
from urllib.parse import parse_qs, urlsplit

from ..errors import BackendTimeoutError, ProtocolError, TransportError
from .framing import read_frame, write_frame
from .messages import (
    AskRequest,
    AskResponse,
    BackendDescriptor,
    ErrorMessage,
    HandshakeRequest,
    compatible_version,
    decode_message,
    encode_message,
)

DEFAULT_TIMEOUT_MS = 5000.0


class _Waiter:
    __slots__ = ("event", "message")

    def __init__(self):
        self.event = threading.Event()
        self.message = None


def _connect_socket(endpoint: str, timeout_s: float) -> socket.socket:
    if endpoint.startswith("unix:"):
        path = endpoint[len("unix:") :]
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout_s)
        sock.connect(path)
        return sock
    hostport = endpoint[len("tcp:") :] if endpoint.startswith("tcp:") else endpoint
    host, _, port = hostport.rpartition(":")
    if not host or not port.isdigit():
        raise TransportError(f"cannot parse endpoint {endpoint!r}")
    sock = socket.create_connection((host, int(port)), timeout=timeout_s)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


class BackendClient:
    """A connected backend speaking protocol v1.x over a stream socket."""

    def __init__(self, endpoint: str, timeout_ms: float = DEFAULT_TIMEOUT_MS):
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        self._send_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending = {}
        self._closed = False
        try:
            self._sock = _connect_socket(endpoint, timeout_ms / 1000.0)
        except OSError as exc:
            raise TransportError(f"cannot reach backend at {endpoint!r}: {exc}") from exc
        self._descriptor = self._handshake()
        self._sock.settimeout(0.25)  # receiver loop poll interval
        self._receiver = threading.Thread(
            target=self._receive_loop, name=f"backend-recv:{endpoint}", daemon=True
        )
        self._receiver.start()

    def _handshake(self) -> BackendDescriptor:
        try:
            write_frame(self._sock, encode_message(HandshakeRequest()))
            payload = read_frame(self._sock)
        except OSError as exc:
            raise TransportError(f"handshake I/O failure: {exc}") from exc
        if payload is None:
            raise TransportError("backend closed the connection during handshake")
        message = decode_message(payload)
        if isinstance(message, ErrorMessage):
            raise ProtocolError(f"backend refused handshake: {message.code}: {message.message}")
        if not isinstance(message, BackendDescriptor):
            raise ProtocolError(f"expected a descriptor, got {type(message).__name__}")
        if not compatible_version(message.protocol_version):
            raise ProtocolError(
                f"backend speaks protocol {message.protocol_version!r}, "
                f"this client requires the same major version as 1.0"
            )
        return message.validate()

    def descriptor(self) -> BackendDescriptor:
        return self._descriptor

    def _receive_loop(self) -> None:
        try:
            while not self._closed:
                try:
                    payload = read_frame(self._sock)
                except socket.timeout:
                    continue
                if payload is None:
                    break
                try:
                    message = decode_message(payload)
                except ProtocolError:
                    continue  # unusable frame; let the waiter time out
                msg_id = getattr(message, "id", None)
                if msg_id is None:
                    continue
                with self._pending_lock:
                    waiter = self._pending.get(msg_id)
                if waiter is not None:
                    waiter.message = message
                    waiter.event.set()
        except (OSError, ProtocolError):
            pass
        finally:
            self._fail_pending()

    def _fail_pending(self) -> None:
        with self._pending_lock:
            waiters = list(self._pending.values())
        for waiter in waiters:
            waiter.event.set()

    def ask(self, request: AskRequest, timeout_ms: Optional[float] = None) -> AskResponse:
        """Send one ask and wait for its answer; raises on timeout or loss."""
        if self._closed:
            raise TransportError("client is closed")
        request.validate()
        deadline_ms = self.timeout_ms if timeout_ms is None else timeout_ms
        qids = [q.qid for q in request.questions]
        waiter = _Waiter()
        with self._pending_lock:
            if request.id in self._pending:
                raise ProtocolError(f"request id {request.id!r} already in flight")
            self._pending[request.id] = waiter
        try:
            with self._send_lock:
                try:
                    write_frame(self._sock, encode_message(request))
                except OSError as exc:
                    raise TransportError(
                        f"send failed: {exc}", failed_query_ids=qids
                    ) from exc
            if not waiter.event.wait(deadline_ms / 1000.0):
                raise BackendTimeoutError(
                    f"backend did not answer within {deadline_ms:.0f} ms",
                    failed_query_ids=qids,
                )
            message = waiter.message
        finally:
            with self._pending_lock:
                self._pending.pop(request.id, None)
        if message is None:
            raise TransportError("connection lost while waiting", failed_query_ids=qids)
        if isinstance(message, ErrorMessage):
            raise ProtocolError(f"backend error {message.code}: {message.message}")
        return message.validate().check_matches(request)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def open_backend(endpoint: str, timeout_ms: float = DEFAULT_TIMEOUT_MS):
    """Resolve an endpoint string to a ready backend.

    ``mock:`` endpoints build an in-process mock from a truth sidecar file;
    query parameters: seed, flip, per_call_ms, per_question_ms, joint (0/1),
    confidence (0/1), omit (comma-separated kind ids).
    """
    if endpoint.startswith("mock:"):
        from .mock import GroundTruthStore, LatencyModel, MockBackend, NoiseModel

        rest = endpoint[len("mock:") :]
        parts = urlsplit(rest)
        params = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        truth = GroundTruthStore.load(parts.path)
        noise = NoiseModel(flip_prob=float(params.get("flip", 0.0)))
        latency = LatencyModel(
            per_call_ms=float(params.get("per_call_ms", 0.0)),
            per_question_ms=float(params.get("per_question_ms", 0.0)),
        )
        omit = tuple(x for x in params.get("omit", "").split(",") if x)
        return MockBackend(
            truth,
            noise=noise,
            seed=int(params.get("seed", 0)),
            latency=latency,
            supports_joint=params.get("joint", "1") != "0",
            supports_confidence=params.get("confidence", "1") != "0",
            omit_kinds=omit,
        )
    return BackendClient(endpoint, timeout_ms=timeout_ms)
