"""Length-prefixed framing over stream sockets.

Each frame is a 4-byte big-endian unsigned length followed by that many
payload bytes. A clean EOF at a frame boundary reads as ``None``; anything
else (truncation, oversized length) is a protocol violation.
"""

from __future__ import annotations

import socket
import struct
from typing import Optional

from ..errors import ProtocolError

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_MESSAGE_SIZE = 64 * 1024 * 1024


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[bytes]:
    """Read one frame; None on clean EOF before any header byte."""
    header = _recv_exact(sock, HEADER_SIZE)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_MESSAGE_SIZE:
        raise ProtocolError(f"frame of {length} bytes exceeds the message size cap")
    if length == 0:
        return b""
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return body


def write_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_MESSAGE_SIZE:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds the message size cap")
    sock.sendall(HEADER.pack(len(payload)) + payload)
