"""Query construction and answer parsing for context recognition.

Turns a frame plus a list of context kinds into backend queries (one per
question, or a single fused prompt), and normalizes whatever text a backend
replies with into yes/no/unparseable verdicts. Parsing is total: arbitrary
reply text never raises, it degrades to ``unparseable``.

All functions here are pure; only :func:`recognize` touches a backend.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional

from .errors import CapabilityError, DataError, TransportError
from .taxonomy import resolve_kind, resolve_kinds

MODE_INDIVIDUAL = "individual"
MODE_JOINT = "joint"

JOINT_INSTRUCTION = (
    "Answer each of the following numbered questions about the image with "
    "only 'yes' or 'no', as a numbered list."
)


class Verdict(str, Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


#: Where an answer's confidence came from: reported by the backend, assumed
#: for a definitive reply that carried no score, or absent (unparseable).
CONF_BACKEND = "backend"
CONF_ASSUMED = "assumed"
CONF_NONE = "none"


@dataclass(frozen=True)
class Answer:
    """A normalized backend verdict for one context question."""

    verdict: Verdict
    confidence: float
    raw_text: str
    latency_ms: float = 0.0
    confidence_source: str = CONF_BACKEND

    def __post_init__(self):
        if self.verdict is Verdict.UNPARSEABLE and self.confidence != 0.0:
            raise DataError("unparseable answers must carry confidence 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")
        if self.latency_ms < 0:
            raise DataError("latency must be nonnegative")

    @property
    def is_definitive(self) -> bool:
        return self.verdict in (Verdict.YES, Verdict.NO)


@dataclass(frozen=True)
class ContextQuery:
    """One backend query: a prompt about an image covering one or more kinds."""

    query_id: str
    image_ref: str
    kinds: tuple
    mode: str
    prompt_text: str

    def __post_init__(self):
        if self.mode not in (MODE_INDIVIDUAL, MODE_JOINT):
            raise DataError(f"unknown query mode {self.mode!r}")
        if not self.kinds:
            raise DataError("a query must cover at least one kind")
        if self.mode == MODE_INDIVIDUAL and len(self.kinds) != 1:
            raise DataError("individual queries cover exactly one kind")
        if not self.prompt_text:
            raise DataError("prompt_text must be nonempty")


@lru_cache(maxsize=1)
def _cues() -> tuple:
    raw = json.loads(
        resources.files("contextd.data").joinpath("cues.json").read_text("utf-8")
    )
    return frozenset(raw["affirmative"]), frozenset(raw["negative"]), raw["cue_version"]


def cue_version() -> str:
    return _cues()[2]


def _checked_kinds(kinds) -> tuple:
    resolved = resolve_kinds(kinds)
    if not resolved:
        raise DataError("kinds must be nonempty")
    seen = set()
    for k in resolved:
        if k.id in seen:
            raise DataError(f"duplicate kind {k.id!r} in query build")
        seen.add(k.id)
    return resolved


def build_individual_queries(image_ref: str, kinds) -> list:
    """One query per kind, prompt equal to the kind's question template."""
    resolved = _checked_kinds(kinds)
    return [
        ContextQuery(
            query_id=k.id,
            image_ref=image_ref,
            kinds=(k,),
            mode=MODE_INDIVIDUAL,
            prompt_text=k.question_text,
        )
        for k in resolved
    ]


def build_joint_query(image_ref: str, kinds) -> ContextQuery:
    """A single fused prompt enumerating every question as a numbered list.

    The reply contract is the mirror image: a numbered yes/no list, parsed by
    :func:`parse_joint_answer`. Item ``k`` maps back to ``kinds[k-1]``.
    """
    resolved = _checked_kinds(kinds)
    numbered = " ".join(
        f"{i}. {k.question_text}" for i, k in enumerate(resolved, start=1)
    )
    return ContextQuery(
        query_id="joint",
        image_ref=image_ref,
        kinds=resolved,
        mode=MODE_JOINT,
        prompt_text=f"{JOINT_INSTRUCTION} {numbered}",
    )


_TOKEN_RE = re.compile(r"[a-z]+")


def _verdict_from_text(text: str) -> Verdict:
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        return Verdict.UNPARSEABLE
    affirmative, negative, _ = _cues()
    lead = tokens[0]
    if lead == "yes":
        return Verdict.YES
    if lead == "no":
        return Verdict.NO
    # Leading token was not definitive: fall back to a whole-text cue scan.
    hits_yes = any(t in affirmative for t in tokens)
    hits_no = any(t in negative for t in tokens)
    if hits_yes and not hits_no:
        return Verdict.YES
    if hits_no and not hits_yes:
        return Verdict.NO
    return Verdict.UNPARSEABLE


def _make_answer(
    raw_text: str, verdict: Verdict, confidence: Optional[float], latency_ms: float
) -> Answer:
    if verdict is Verdict.UNPARSEABLE:
        return Answer(verdict, 0.0, raw_text, latency_ms, CONF_NONE)
    if confidence is None:
        return Answer(verdict, 1.0, raw_text, latency_ms, CONF_ASSUMED)
    return Answer(verdict, float(confidence), raw_text, latency_ms, CONF_BACKEND)


def parse_individual_answer(
    raw_text: str, confidence: Optional[float] = None, latency_ms: float = 0.0
) -> Answer:
    """Normalize a free-text reply to a single yes/no question.

    The first alphabetic token wins when it is a bare yes/no (punctuation and
    case ignored); otherwise the versioned cue lists decide; otherwise the
    reply is unparseable. A definitive reply with no backend confidence is
    assumed fully confident and flagged as such.
    """
    return _make_answer(raw_text, _verdict_from_text(raw_text), confidence, latency_ms)


_ITEM_MARKER_RE = re.compile(r"(\d+)\s*[.):]\s*")


def parse_joint_answer(
    raw_text: str, kinds, confidence: Optional[float] = None, latency_ms: float = 0.0
) -> dict:
    """Map a numbered-list reply back onto the kinds of a joint query.

    Total over arbitrary text: item ``k`` answers ``kinds[k-1]``; indices that
    are missing, malformed, duplicated (first occurrence wins), or out of
    range leave the corresponding kind unparseable. Always returns exactly one
    entry per kind.
    """
    resolved = resolve_kinds(kinds)
    fragments = {}
    markers = list(_ITEM_MARKER_RE.finditer(raw_text))
    for pos, marker in enumerate(markers):
        idx = int(marker.group(1))
        if not 1 <= idx <= len(resolved) or idx in fragments:
            continue
        end = markers[pos + 1].start() if pos + 1 < len(markers) else len(raw_text)
        fragments[idx] = raw_text[marker.end() : end].strip()

    out = {}
    for i, kind in enumerate(resolved, start=1):
        fragment = fragments.get(i)
        if fragment is None:
            out[kind] = _make_answer("", Verdict.UNPARSEABLE, None, latency_ms)
        else:
            verdict = _verdict_from_text(fragment)
            out[kind] = _make_answer(fragment, verdict, confidence, latency_ms)
    return out


def _new_request(image_ref, image_bytes, mode, questions, request_id):
    # Imported lazily to keep this module import-light for pure parsing use.
    from .protocol.messages import AskRequest, ImagePayload, Question

    payload = (
        ImagePayload.from_bytes(image_bytes)
        if image_bytes is not None
        else ImagePayload.from_locator(image_ref)
    )
    return AskRequest(
        id=request_id,
        image=payload,
        mode=mode,
        questions=tuple(Question(qid=qid, text=text) for qid, text in questions),
    )


_REQUEST_SEQ = [0]


def _next_request_id(prefix: str) -> str:
    _REQUEST_SEQ[0] += 1
    return f"{prefix}-{_REQUEST_SEQ[0]}"


def _ask_one(backend, image_ref, image_bytes, query, timeout_ms=None):
    request = _new_request(
        image_ref,
        image_bytes,
        query.mode,
        [(query.query_id, query.prompt_text)],
        _next_request_id(query.mode),
    )
    response = backend.ask(request, timeout_ms=timeout_ms)
    item = next((a for a in response.answers if a.qid == query.query_id), None)
    return item, response.backend_latency_ms


def recognize(
    image_ref: str,
    kinds,
    backend,
    mode: str = MODE_INDIVIDUAL,
    fallback: bool = False,
    image_bytes: Optional[bytes] = None,
    timeout_ms: Optional[float] = None,
) -> dict:
    """Answer every kind for one frame; the core recognition pipeline.

    Individual mode issues one backend call per kind. Joint mode fuses all
    kinds into one prompt; with ``fallback`` set, kinds the joint reply left
    unparseable are retried once individually. The result always covers every
    requested kind. A transport failure raises ``TransportError`` carrying the
    unanswered query ids, with the answers gathered so far attached.
    """
    resolved = _checked_kinds(kinds)
    descriptor = backend.descriptor()

    if mode == MODE_JOINT:
        if not descriptor.supports_joint:
            raise CapabilityError(f"backend {descriptor.name!r} does not support joint queries")
        if descriptor.max_joint_questions and len(resolved) > descriptor.max_joint_questions:
            raise CapabilityError(
                f"backend {descriptor.name!r} accepts at most "
                f"{descriptor.max_joint_questions} joint questions"
            )
        query = build_joint_query(image_ref, resolved)
        try:
            item, latency = _ask_one(backend, image_ref, image_bytes, query, timeout_ms)
        except TransportError as exc:
            raise TransportError(
                str(exc), failed_query_ids=[k.id for k in resolved], partial={}
            ) from exc
        raw = item.answer_text if item is not None else ""
        conf = item.confidence if item is not None else None
        answers = parse_joint_answer(raw, resolved, confidence=conf, latency_ms=latency)
        if fallback:
            retry = [k for k, a in answers.items() if not a.is_definitive]
            if retry:
                answers.update(
                    recognize(
                        image_ref, retry, backend,
                        mode=MODE_INDIVIDUAL, image_bytes=image_bytes,
                        timeout_ms=timeout_ms,
                    )
                )
        return answers

    if mode != MODE_INDIVIDUAL:
        raise DataError(f"unknown recognition mode {mode!r}")

    answers = {}
    queries = build_individual_queries(image_ref, resolved)
    for pos, query in enumerate(queries):
        try:
            item, latency = _ask_one(backend, image_ref, image_bytes, query, timeout_ms)
        except TransportError as exc:
            raise TransportError(
                str(exc),
                failed_query_ids=[q.query_id for q in queries[pos:]],
                partial=answers,
            ) from exc
        kind = query.kinds[0]
        if item is None:
            answers[kind] = _make_answer("", Verdict.UNPARSEABLE, None, latency)
        else:
            answers[kind] = parse_individual_answer(
                item.answer_text, confidence=item.confidence, latency_ms=latency
            )
    return answers
