"""Length-prefixed frames and the canonical JSON body encoding.

Per PROTOCOL.md: a 4-byte big-endian length, then that many bytes of UTF-8
JSON with sorted keys and compact separators.
"""

from __future__ import annotations

import json
import socket
import struct
from typing import Optional

HEADER = struct.Struct(">I")
MAX_MESSAGE_SIZE = 64 * 1024 * 1024


class FramingError(Exception):
    pass


def encode_body(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def decode_body(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FramingError("body must be a JSON object")
    return obj


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[bytes]:
    header = _recv_exact(sock, HEADER.size)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_MESSAGE_SIZE:
        raise FramingError(f"frame of {length} bytes exceeds the cap")
    if length == 0:
        return b""
    body = _recv_exact(sock, length)
    if body is None:
        raise FramingError("connection closed mid-frame")
    return body


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(HEADER.pack(len(payload)) + payload)
