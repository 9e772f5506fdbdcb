"""Socket server adapter exposing any in-process backend over the protocol.

Used by tests and demos to put the mock behind a real socket; the standalone
sidecar reimplements the same wire behavior from PROTOCOL.md. A malformed
request produces an error message and keeps the connection open.
"""

from __future__ import annotations

import socket
import threading

from ..errors import ContextdError, ProtocolError
from .framing import read_frame, write_frame
from .messages import (
    AskRequest,
    ErrorMessage,
    HandshakeRequest,
    compatible_version,
    decode_message,
    encode_message,
)


class BackendServer:
    """Serve a backend object (descriptor()/ask()) on a TCP listener."""

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stopping = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"backend-server:{self.port}", daemon=True
        )

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "BackendServer":
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._listener.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            while not self._stopping.is_set():
                try:
                    payload = read_frame(conn)
                except (ProtocolError, OSError):
                    return  # unrecoverable framing damage; drop the connection
                if payload is None:
                    return
                reply = self._handle(payload)
                try:
                    write_frame(conn, encode_message(reply))
                except OSError:
                    return

    def _handle(self, payload: bytes):
        try:
            message = decode_message(payload)
        except ProtocolError as exc:
            return ErrorMessage(code="malformed", message=str(exc))
        if isinstance(message, HandshakeRequest):
            if not compatible_version(message.protocol_version):
                return ErrorMessage(
                    code="version_mismatch",
                    message=f"server speaks 1.x, client sent {message.protocol_version!r}",
                )
            return self.backend.descriptor()
        if isinstance(message, AskRequest):
            try:
                return self.backend.ask(message)
            except ProtocolError as exc:
                return ErrorMessage(code="invalid", message=str(exc), id=message.id)
            except ContextdError as exc:
                return ErrorMessage(code="backend_failure", message=str(exc), id=message.id)
        return ErrorMessage(code="unexpected", message=f"cannot serve {type(message).__name__}")
