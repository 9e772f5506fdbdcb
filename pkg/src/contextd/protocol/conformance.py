"""Byte-level conformance suite for backend implementations.

Runs against a live endpoint and exercises the wire contract directly (raw
sockets, not the client), so any backend that passes interoperates with the
orchestrator. The same suite gates the built-in mock and external sidecars.
"""

from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass, field
from typing import Optional

from ..taxonomy import kind_by_id
from ..queries import Verdict, build_joint_query, parse_individual_answer, parse_joint_answer
from ..errors import ProtocolError
from .framing import read_frame, write_frame
from .messages import (
    AskRequest,
    AskResponse,
    BackendDescriptor,
    ErrorMessage,
    HandshakeRequest,
    ImagePayload,
    Question,
    compatible_version,
    decode_message,
    encode_message,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    endpoint: str
    checks: list = field(default_factory=list)

    def record(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(CheckResult(name, passed, detail))

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL'} {c.name}"
            + (f": {c.detail}" if c.detail and not c.passed else "")
            for c in self.checks
        ]
        lines.append(f"{'OK' if self.ok else 'FAILED'} ({len(self.checks)} checks)")
        return "\n".join(lines)


def _connect(endpoint: str) -> socket.socket:
    host, _, port = endpoint.rpartition(":")
    sock = socket.create_connection((host, int(port)), timeout=10.0)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def _roundtrip(sock: socket.socket, message) -> object:
    write_frame(sock, encode_message(message))
    payload = read_frame(sock)
    if payload is None:
        raise ProtocolError("peer closed the connection")
    return decode_message(payload)


def _expected_verdicts(bits: dict) -> dict:
    return {k: (Verdict.YES if v else Verdict.NO) for k, v in bits.items()}


def run_conformance(
    endpoint: str,
    image_ref: Optional[str] = None,
    expected_bits: Optional[dict] = None,
    expected_delay_ms: Optional[float] = None,
    delay_tolerance_ms: float = 30.0,
) -> ConformanceReport:
    """Exercise a backend endpoint and report per-check pass/fail.

    ``image_ref`` with ``expected_bits`` enables the correctness checks
    (the backend is expected to answer those kinds from its ground truth);
    ``expected_delay_ms`` additionally verifies configured delay emulation.
    """
    report = ConformanceReport(endpoint=endpoint)
    kind_ids = sorted(expected_bits) if expected_bits else []
    kinds = [kind_by_id(k) for k in kind_ids]

    sock = _connect(endpoint)
    try:
        # Handshake returns a valid, version-compatible descriptor, and its
        # canonical re-encoding is byte-identical to what came off the wire.
        write_frame(sock, encode_message(HandshakeRequest()))
        payload = read_frame(sock)
        descriptor = None
        try:
            message = decode_message(payload)
            descriptor = message if isinstance(message, BackendDescriptor) else None
        except ProtocolError as exc:
            report.record("handshake", False, str(exc))
        if descriptor is not None:
            report.record(
                "handshake",
                compatible_version(descriptor.protocol_version) and bool(descriptor.name),
                f"descriptor {descriptor.name!r} v{descriptor.protocol_version}",
            )
            report.record(
                "byte_stable_descriptor",
                encode_message(descriptor) == payload,
                "re-encoding differs from wire bytes",
            )
        elif not report.checks:
            report.record("handshake", False, "no descriptor returned")

        # An unsupported protocol version is refused with an error message,
        # and the connection survives to serve a correct handshake afterward.
        reply = _roundtrip(sock, HandshakeRequest(protocol_version="0.9"))
        report.record(
            "version_mismatch_refused",
            isinstance(reply, ErrorMessage),
            f"got {type(reply).__name__}",
        )
        reply = _roundtrip(sock, HandshakeRequest())
        report.record(
            "connection_survives_version_error",
            isinstance(reply, BackendDescriptor),
            f"got {type(reply).__name__}",
        )

        # A malformed body (valid frame, broken JSON) earns an error reply,
        # not a dropped connection.
        write_frame(sock, b"{not json")
        payload = read_frame(sock)
        ok = False
        detail = "connection closed"
        if payload is not None:
            try:
                ok = isinstance(decode_message(payload), ErrorMessage)
                detail = "" if ok else "expected an error message"
            except ProtocolError as exc:
                detail = str(exc)
        report.record("malformed_request_recovery", ok, detail)

        if kinds and image_ref is not None:
            # Individual asks over a known locator answer from ground truth.
            request = AskRequest(
                id="conf-individual",
                image=ImagePayload.from_locator(image_ref),
                mode="individual",
                questions=tuple(
                    Question(qid=k.id, text=k.question_text) for k in kinds
                ),
            ).validate()
            t0 = time.monotonic()
            reply = _roundtrip(sock, request)
            elapsed_ms = (time.monotonic() - t0) * 1000.0
            if isinstance(reply, AskResponse):
                try:
                    reply.validate().check_matches(request)
                    report.record("ask_individual_well_formed", True)
                except ProtocolError as exc:
                    report.record("ask_individual_well_formed", False, str(exc))
                got = {
                    a.qid: parse_individual_answer(a.answer_text, a.confidence).verdict
                    for a in reply.answers
                }
                expected = _expected_verdicts(expected_bits)
                report.record(
                    "ask_individual_truth",
                    got == expected,
                    f"expected {expected}, got {got}",
                )
                report.record(
                    "byte_stable_response",
                    encode_message(reply) == encode_message(AskResponse.from_wire(reply.to_wire())),
                    "canonical re-encoding is unstable",
                )
            else:
                report.record("ask_individual_well_formed", False, f"got {type(reply).__name__}")

            if expected_delay_ms is not None:
                per_query = elapsed_ms / len(kinds)
                report.record(
                    "delay_emulation",
                    abs(per_query - expected_delay_ms) <= delay_tolerance_ms
                    and per_query >= expected_delay_ms * 0.9,
                    f"measured {per_query:.1f} ms/query vs configured {expected_delay_ms:.1f} ms",
                )

            # Unknown questions may go unanswered; known ones still arrive.
            request = AskRequest(
                id="conf-unknown",
                image=ImagePayload.from_locator(image_ref),
                mode="individual",
                questions=(
                    Question(qid=kinds[0].id, text=kinds[0].question_text),
                    Question(qid="mystery", text="What color is the sky?"),
                ),
            ).validate()
            reply = _roundtrip(sock, request)
            ok = (
                isinstance(reply, AskResponse)
                and reply.id == request.id
                and any(a.qid == kinds[0].id for a in reply.answers)
            )
            report.record("unanswered_qids_tolerated", ok)

            # Inline payloads must be accepted (a well-formed response, even
            # if the backend has no truth for the bytes and answers nothing).
            request = AskRequest(
                id="conf-inline",
                image=ImagePayload.from_bytes(b"\x89PNG-not-really"),
                mode="individual",
                questions=(Question(qid=kinds[0].id, text=kinds[0].question_text),),
            ).validate()
            reply = _roundtrip(sock, request)
            report.record(
                "inline_payload_accepted",
                isinstance(reply, AskResponse) and reply.id == request.id,
                f"got {type(reply).__name__}",
            )

            if descriptor is not None and descriptor.supports_joint and len(kinds) >= 2:
                joint = build_joint_query(image_ref, kinds)
                request = AskRequest(
                    id="conf-joint",
                    image=ImagePayload.from_locator(image_ref),
                    mode="joint",
                    questions=(Question(qid="joint", text=joint.prompt_text),),
                ).validate()
                reply = _roundtrip(sock, request)
                ok, detail = False, f"got {type(reply).__name__}"
                if isinstance(reply, AskResponse):
                    item = next((a for a in reply.answers if a.qid == "joint"), None)
                    raw = item.answer_text if item else ""
                    conf = item.confidence if item else None
                    parsed = parse_joint_answer(raw, kinds, confidence=conf)
                    got = {k.id: a.verdict for k, a in parsed.items()}
                    expected = _expected_verdicts(expected_bits)
                    ok = got == expected
                    detail = f"expected {expected}, got {got}"
                report.record("ask_joint_truth", ok, detail)
    finally:
        sock.close()
    return report
