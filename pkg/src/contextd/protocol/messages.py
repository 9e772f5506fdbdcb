"""Wire message types and the canonical byte encoding (protocol v1.0).

Message bodies are UTF-8 JSON with sorted keys and compact separators, so a
decode/encode round trip is byte-stable. Compatibility is by major version:
a peer speaking any "1.x" is accepted.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ProtocolError

PROTOCOL_VERSION = "1.0"

#: Hard cap on a single inline image payload (bytes, before base64).
MAX_IMAGE_BYTES = 16 * 1024 * 1024

MODES = ("individual", "joint")


def compatible_version(version: str) -> bool:
    """Same-major compatibility rule: "1.x" talks to "1.y"."""
    if not isinstance(version, str) or "." not in version:
        return False
    return version.split(".", 1)[0] == PROTOCOL_VERSION.split(".", 1)[0]


@dataclass(frozen=True)
class BackendDescriptor:
    """What a backend is and which query shapes it accepts."""

    name: str
    model_id: str
    supports_joint: bool
    max_joint_questions: int = 0
    supports_confidence: bool = True
    protocol_version: str = PROTOCOL_VERSION

    def validate(self) -> "BackendDescriptor":
        if not self.name:
            raise ProtocolError("descriptor name must be nonempty")
        if self.max_joint_questions < 0:
            raise ProtocolError("max_joint_questions must be nonnegative")
        return self

    def to_wire(self) -> dict:
        return {
            "type": "descriptor",
            "name": self.name,
            "model_id": self.model_id,
            "supports_joint": self.supports_joint,
            "max_joint_questions": self.max_joint_questions,
            "supports_confidence": self.supports_confidence,
            "protocol_version": self.protocol_version,
        }

    @classmethod
    def from_wire(cls, raw: dict) -> "BackendDescriptor":
        try:
            return cls(
                name=raw["name"],
                model_id=raw["model_id"],
                supports_joint=bool(raw["supports_joint"]),
                max_joint_questions=int(raw.get("max_joint_questions", 0)),
                supports_confidence=bool(raw.get("supports_confidence", True)),
                protocol_version=raw["protocol_version"],
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed descriptor: {exc}") from exc


@dataclass(frozen=True)
class HandshakeRequest:
    protocol_version: str = PROTOCOL_VERSION

    def to_wire(self) -> dict:
        return {"type": "handshake", "protocol_version": self.protocol_version}

    @classmethod
    def from_wire(cls, raw: dict) -> "HandshakeRequest":
        version = raw.get("protocol_version")
        if not isinstance(version, str):
            raise ProtocolError("handshake missing protocol_version")
        return cls(protocol_version=version)


@dataclass(frozen=True)
class ImagePayload:
    """Either inline image bytes or an opaque locator URI."""

    kind: str
    data: Optional[bytes] = None
    uri: Optional[str] = None

    @classmethod
    def from_bytes(cls, data: bytes) -> "ImagePayload":
        return cls(kind="inline", data=bytes(data)).validate()

    @classmethod
    def from_locator(cls, uri: str) -> "ImagePayload":
        return cls(kind="locator", uri=uri).validate()

    def validate(self) -> "ImagePayload":
        if self.kind == "inline":
            if not isinstance(self.data, bytes):
                raise ProtocolError("inline image payload requires bytes")
            if len(self.data) > MAX_IMAGE_BYTES:
                raise ProtocolError(
                    f"inline image of {len(self.data)} bytes exceeds the "
                    f"{MAX_IMAGE_BYTES}-byte cap"
                )
        elif self.kind == "locator":
            if not self.uri:
                raise ProtocolError("locator image payload requires a nonempty uri")
        else:
            raise ProtocolError(f"unknown image payload kind {self.kind!r}")
        return self

    def to_wire(self) -> dict:
        if self.kind == "inline":
            return {"kind": "inline", "data": base64.b64encode(self.data).decode("ascii")}
        return {"kind": "locator", "uri": self.uri}

    @classmethod
    def from_wire(cls, raw: dict) -> "ImagePayload":
        kind = raw.get("kind")
        if kind == "inline":
            try:
                data = base64.b64decode(raw["data"], validate=True)
            except (KeyError, ValueError, TypeError) as exc:
                raise ProtocolError("inline image payload is not valid base64") from exc
            return cls(kind="inline", data=data).validate()
        if kind == "locator":
            return cls(kind="locator", uri=raw.get("uri")).validate()
        raise ProtocolError(f"unknown image payload kind {kind!r}")


@dataclass(frozen=True)
class Question:
    qid: str
    text: str

    def to_wire(self) -> dict:
        return {"qid": self.qid, "text": self.text}

    @classmethod
    def from_wire(cls, raw: dict) -> "Question":
        qid, text = raw.get("qid"), raw.get("text")
        if not isinstance(qid, str) or not qid or not isinstance(text, str) or not text:
            raise ProtocolError("question requires nonempty qid and text")
        return cls(qid=qid, text=text)


@dataclass(frozen=True)
class AskRequest:
    id: str
    image: ImagePayload
    mode: str
    questions: tuple

    def validate(self) -> "AskRequest":
        if not self.id:
            raise ProtocolError("request id must be nonempty")
        if self.mode not in MODES:
            raise ProtocolError(f"unknown request mode {self.mode!r}")
        if not self.questions:
            raise ProtocolError("request must carry at least one question")
        qids = [q.qid for q in self.questions]
        if len(set(qids)) != len(qids):
            raise ProtocolError("request qids must be unique")
        self.image.validate()
        return self

    def to_wire(self) -> dict:
        return {
            "type": "ask",
            "id": self.id,
            "image": self.image.to_wire(),
            "mode": self.mode,
            "questions": [q.to_wire() for q in self.questions],
        }

    @classmethod
    def from_wire(cls, raw: dict) -> "AskRequest":
        try:
            return cls(
                id=raw["id"],
                image=ImagePayload.from_wire(raw["image"]),
                mode=raw["mode"],
                questions=tuple(Question.from_wire(q) for q in raw["questions"]),
            ).validate()
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed ask request: {exc}") from exc


@dataclass(frozen=True)
class AnswerItem:
    qid: str
    answer_text: str
    confidence: Optional[float] = None

    def validate(self) -> "AnswerItem":
        if not self.qid:
            raise ProtocolError("answer item requires a qid")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ProtocolError(f"confidence {self.confidence} outside [0, 1]")
        return self

    def to_wire(self) -> dict:
        out = {"qid": self.qid, "answer_text": self.answer_text}
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out

    @classmethod
    def from_wire(cls, raw: dict) -> "AnswerItem":
        try:
            conf = raw.get("confidence")
            return cls(
                qid=raw["qid"],
                answer_text=raw["answer_text"],
                confidence=None if conf is None else float(conf),
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed answer item: {exc}") from exc


@dataclass(frozen=True)
class AskResponse:
    id: str
    answers: tuple
    backend_latency_ms: float = 0.0

    def validate(self) -> "AskResponse":
        if not self.id:
            raise ProtocolError("response id must be nonempty")
        qids = [a.qid for a in self.answers]
        if len(set(qids)) != len(qids):
            raise ProtocolError("a qid appears more than once in the response")
        if self.backend_latency_ms < 0:
            raise ProtocolError("backend latency must be nonnegative")
        for a in self.answers:
            a.validate()
        return self

    def check_matches(self, request: AskRequest) -> "AskResponse":
        if self.id != request.id:
            raise ProtocolError(
                f"response id {self.id!r} does not match request {request.id!r}"
            )
        known = {q.qid for q in request.questions}
        extra = [a.qid for a in self.answers if a.qid not in known]
        if extra:
            raise ProtocolError(f"response carries unknown qids {extra}")
        return self

    def to_wire(self) -> dict:
        return {
            "type": "answers",
            "id": self.id,
            "answers": [a.to_wire() for a in self.answers],
            "backend_latency_ms": self.backend_latency_ms,
        }

    @classmethod
    def from_wire(cls, raw: dict) -> "AskResponse":
        try:
            return cls(
                id=raw["id"],
                answers=tuple(AnswerItem.from_wire(a) for a in raw["answers"]),
                backend_latency_ms=float(raw.get("backend_latency_ms", 0.0)),
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed ask response: {exc}") from exc


@dataclass(frozen=True)
class ErrorMessage:
    code: str
    message: str
    id: Optional[str] = None

    def to_wire(self) -> dict:
        out = {"type": "error", "code": self.code, "message": self.message}
        if self.id is not None:
            out["id"] = self.id
        return out

    @classmethod
    def from_wire(cls, raw: dict) -> "ErrorMessage":
        return cls(
            code=str(raw.get("code", "unknown")),
            message=str(raw.get("message", "")),
            id=raw.get("id"),
        )


_DECODERS = {
    "handshake": HandshakeRequest.from_wire,
    "descriptor": BackendDescriptor.from_wire,
    "ask": AskRequest.from_wire,
    "answers": AskResponse.from_wire,
    "error": ErrorMessage.from_wire,
}


def encode_message(message) -> bytes:
    """Canonical bytes for any wire message: sorted keys, compact JSON."""
    return json.dumps(
        message.to_wire(), sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("utf-8")


def decode_message(payload: bytes):
    """Decode one frame body into its typed message, or raise ProtocolError."""
    try:
        raw = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"message body is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ProtocolError("message body must be a JSON object")
    decoder = _DECODERS.get(raw.get("type"))
    if decoder is None:
        raise ProtocolError(f"unknown message type {raw.get('type')!r}")
    return decoder(raw)
