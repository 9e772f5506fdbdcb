"""The sidecar server: protocol v1.0 over TCP, stub or model behind it.

Each connection is served by its own thread; requests within a connection
are handled sequentially (inference is the bottleneck, not the socket). A
malformed request gets an error reply and the connection stays open. In
model mode a failed model load refuses every handshake with the diagnostic
instead of answering with a descriptor.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .framing import FramingError, decode_body, encode_body, read_frame, write_frame
from .questions import QuestionMap
from .stub import StubAnswerer, TruthStore

PROTOCOL_VERSION = "1.0"


def _compatible(version) -> bool:
    if not isinstance(version, str) or "." not in version:
        return False
    return version.split(".", 1)[0] == PROTOCOL_VERSION.split(".", 1)[0]


@dataclass
class SidecarConfig:
    mode: str = "stub"                 # stub | model
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    name: str = "sidecar"
    model_id: str = ""
    device: str = "cpu"
    supports_joint: bool = True
    truth_path: str = ""
    taxonomy_path: str = ""
    seed: int = 0
    per_question_delay_ms: float = 0.0
    per_call_overhead_ms: float = 0.0

    def validate(self) -> "SidecarConfig":
        if self.mode not in ("stub", "model"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "model" and not self.model_id:
            raise ValueError("model mode requires a model_id")
        if self.mode == "stub":
            if not self.truth_path or not Path(self.truth_path).exists():
                raise ValueError(f"stub mode requires an existing truth file, got {self.truth_path!r}")
            if not self.taxonomy_path or not Path(self.taxonomy_path).exists():
                raise ValueError(
                    f"stub mode requires the published taxonomy file, got {self.taxonomy_path!r}"
                )
        return self


class SidecarServer:
    def __init__(self, config: SidecarConfig):
        self.config = config.validate()
        self._answerer = None
        self._load_error: Optional[str] = None
        self._supports_joint = False
        self._model_id = config.model_id

        if config.mode == "stub":
            self._answerer = StubAnswerer(
                truth=TruthStore.load(config.truth_path),
                questions=QuestionMap.load(config.taxonomy_path),
                seed=config.seed,
                per_question_delay_ms=config.per_question_delay_ms,
                per_call_overhead_ms=config.per_call_overhead_ms,
                supports_joint=config.supports_joint,
            )
            self._supports_joint = config.supports_joint
            self._model_id = self._model_id or "stub/ground-truth"
        else:
            try:
                from .model import ModelAnswerer

                self._answerer = ModelAnswerer(config.model_id, device=config.device)
                self._supports_joint = False  # single-question models only
            except Exception as exc:
                self._load_error = str(exc)

        self._listener = socket.create_server((config.listen_host, config.listen_port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stopping = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"sidecar:{self.port}", daemon=True
        )

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "SidecarServer":
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        self._listener.close()

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stopping.is_set():
                self._stopping.wait(0.5)
        except KeyboardInterrupt:
            self.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()

    # -- connection handling --------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            while not self._stopping.is_set():
                try:
                    payload = read_frame(conn)
                except (FramingError, OSError):
                    return
                if payload is None:
                    return
                reply = self._handle(payload)
                try:
                    write_frame(conn, encode_body(reply))
                except OSError:
                    return

    def _descriptor(self) -> dict:
        return {
            "type": "descriptor",
            "name": self.config.name,
            "model_id": self._model_id,
            "supports_joint": self._supports_joint,
            "max_joint_questions": 0,
            "supports_confidence": True,
            "protocol_version": PROTOCOL_VERSION,
        }

    def _error(self, code: str, message: str, request_id=None) -> dict:
        out = {"type": "error", "code": code, "message": message}
        if request_id is not None:
            out["id"] = request_id
        return out

    def _handle(self, payload: bytes) -> dict:
        try:
            message = decode_body(payload)
        except FramingError as exc:
            return self._error("malformed", str(exc))

        msg_type = message.get("type")
        if msg_type == "handshake":
            if not _compatible(message.get("protocol_version")):
                return self._error(
                    "version_mismatch",
                    f"server speaks {PROTOCOL_VERSION}, "
                    f"client sent {message.get('protocol_version')!r}",
                )
            if self._load_error is not None:
                return self._error("backend_failure", f"model unavailable: {self._load_error}")
            return self._descriptor()
        if msg_type == "ask":
            problem = _validate_ask(message)
            if problem is not None:
                return self._error("malformed", problem, message.get("id"))
            if self._load_error is not None:
                return self._error(
                    "backend_failure", f"model unavailable: {self._load_error}", message["id"]
                )
            try:
                return self._answerer.answer(message)
            except Exception as exc:
                return self._error("backend_failure", str(exc), message.get("id"))
        return self._error("malformed", f"unknown message type {msg_type!r}")


def _validate_ask(message: dict) -> Optional[str]:
    if not isinstance(message.get("id"), str) or not message["id"]:
        return "request id must be a nonempty string"
    if message.get("mode") not in ("individual", "joint"):
        return f"unknown mode {message.get('mode')!r}"
    image = message.get("image")
    if not isinstance(image, dict) or image.get("kind") not in ("inline", "locator"):
        return "image payload must be inline or locator"
    questions = message.get("questions")
    if not isinstance(questions, list) or not questions:
        return "request must carry at least one question"
    qids = []
    for question in questions:
        if not isinstance(question, dict):
            return "questions must be objects"
        qid, text = question.get("qid"), question.get("text")
        if not isinstance(qid, str) or not qid or not isinstance(text, str) or not text:
            return "questions require nonempty qid and text"
        qids.append(qid)
    if len(set(qids)) != len(qids):
        return "request qids must be unique"
    return None
