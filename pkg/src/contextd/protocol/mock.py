"""Deterministic mock backend answering from a ground-truth sidecar file.

The mock is the test oracle for everything upstream: it answers each context
question from per-image truth bits, optionally corrupted by a seeded noise
model, with a configurable latency cost model. Identical (seed, inputs) give
identical byte-level responses regardless of call order, because every draw
is keyed by a hash of (seed, image, kind) rather than a shared stream.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..taxonomy import all_kind_ids, kind_for_question, resolve_kind
from ..clock import MonotonicClock
from ..errors import BackendTimeoutError, DataError, MissingTruthError, UnknownContextError
from ..queries import Answer, Verdict
from .messages import AnswerItem, AskRequest, AskResponse, BackendDescriptor


class GroundTruthStore:
    """Per-image truth bits for every context kind, keyed by image_ref."""

    def __init__(self, records: Optional[dict] = None):
        self._records = {}
        for image_ref, bits in (records or {}).items():
            self.put(image_ref, bits)

    def put(self, image_ref: str, bits: dict) -> None:
        unknown = set(bits) - set(all_kind_ids())
        if unknown:
            raise DataError(f"truth for {image_ref!r} names unknown kinds {sorted(unknown)}")
        self._records[image_ref] = {k: bool(v) for k, v in bits.items()}

    def bits_for(self, image_ref: str) -> dict:
        try:
            return self._records[image_ref]
        except KeyError:
            raise MissingTruthError(f"no ground truth for image {image_ref!r}") from None

    def truth_for(self, image_ref: str, kind_id: str) -> bool:
        bits = self.bits_for(image_ref)
        try:
            return bits[kind_id]
        except KeyError:
            raise MissingTruthError(
                f"ground truth for {image_ref!r} lacks the {kind_id!r} bit"
            ) from None

    def __contains__(self, image_ref: str) -> bool:
        return image_ref in self._records

    def __len__(self) -> int:
        return len(self._records)

    def image_refs(self) -> list:
        return sorted(self._records)

    @classmethod
    def load(cls, path) -> "GroundTruthStore":
        """Read a truth sidecar: one JSON record per line, named boolean bits."""
        store = cls()
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                store.put(raw["image_ref"], raw["contexts"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad truth record: {exc}") from exc
        return store

    def save(self, path) -> None:
        lines = [
            json.dumps(
                {"image_ref": ref, "contexts": self._records[ref]}, sort_keys=True
            )
            for ref in sorted(self._records)
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class NoiseModel:
    """How often the mock lies, and how confident it sounds either way.

    ``flip_prob`` is a single rate or a per-kind map. Confidence is drawn
    uniformly from ``conf_correct`` when the emitted verdict matches truth
    and from ``conf_incorrect`` when it does not.
    """

    flip_prob: object = 0.0
    conf_correct: tuple = (0.95, 1.0)
    conf_incorrect: tuple = (0.55, 0.95)

    def flip_prob_for(self, kind_id: str) -> float:
        p = self.flip_prob.get(kind_id, 0.0) if isinstance(self.flip_prob, dict) else self.flip_prob
        if not 0.0 <= p <= 1.0:
            raise DataError(f"flip probability {p} outside [0, 1]")
        return float(p)


@dataclass(frozen=True)
class LatencyModel:
    """Cost of one backend call: fixed overhead plus a per-question marginal."""

    per_call_ms: float = 0.0
    per_question_ms: float = 0.0

    def cost_ms(self, n_questions: int) -> float:
        return self.per_call_ms + self.per_question_ms * n_questions


def _draw_rng(seed: int, image_ref: str, kind_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{image_ref}|{kind_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def mock_answer(image_meta: dict, kind, noise_model: NoiseModel, seed: int) -> Answer:
    """The oracle: a deterministic verdict for one (image, kind) pair.

    ``image_meta`` is one truth record: ``{"image_ref": ..., "contexts":
    {kind_id: bool, ...}}``. The verdict is the truth bit, flipped with the
    kind's configured probability using a draw keyed by (seed, image, kind).
    """
    kind = resolve_kind(kind)
    image_ref = image_meta.get("image_ref", "")
    contexts = image_meta.get("contexts", {})
    if kind.id not in contexts:
        raise MissingTruthError(f"image meta for {image_ref!r} lacks the {kind.id!r} bit")
    truth = bool(contexts[kind.id])

    rng = _draw_rng(seed, image_ref, kind.id)
    flipped = rng.random() < noise_model.flip_prob_for(kind.id)
    emitted = truth ^ flipped
    lo, hi = noise_model.conf_correct if emitted == truth else noise_model.conf_incorrect
    confidence = rng.uniform(lo, hi)
    return Answer(
        verdict=Verdict.YES if emitted else Verdict.NO,
        confidence=confidence,
        raw_text="yes" if emitted else "no",
    )


_SUBQUESTION_RE = re.compile(r"\d+\.\s*([^?]*\?)")


class MockBackend:
    """An in-process backend implementing the ask interface over truth bits.

    Supports both query modes: individual questions are matched back to their
    kind via the taxonomy's reverse template lookup, and joint prompts are
    split on their numbered sub-questions and answered as a numbered yes/no
    list. Questions that match no template are left unanswered, which the
    parser upstream surfaces as unparseable.
    """

    def __init__(
        self,
        truth: GroundTruthStore,
        noise: NoiseModel = NoiseModel(),
        seed: int = 0,
        latency: LatencyModel = LatencyModel(),
        clock=None,
        name: str = "mock",
        model_id: str = "mock/ground-truth",
        supports_joint: bool = True,
        max_joint_questions: int = 0,
        supports_confidence: bool = True,
        omit_kinds=(),
        garble_kinds=(),
        joint_omit_kinds=(),
    ):
        self.truth = truth
        self.noise = noise
        self.seed = seed
        self.latency = latency
        self.clock = clock or MonotonicClock()
        # Fault injection: kinds the backend refuses to answer, answers with
        # text no parser rule can resolve, or drops only from joint replies.
        self.omit_kinds = frozenset(omit_kinds)
        self.garble_kinds = frozenset(garble_kinds)
        self.joint_omit_kinds = frozenset(joint_omit_kinds)
        self._descriptor = BackendDescriptor(
            name=name,
            model_id=model_id,
            supports_joint=supports_joint,
            max_joint_questions=max_joint_questions,
            supports_confidence=supports_confidence,
        ).validate()

    def descriptor(self) -> BackendDescriptor:
        return self._descriptor

    def _image_ref(self, request: AskRequest) -> str:
        if request.image.kind == "locator":
            return request.image.uri
        digest = hashlib.sha256(request.image.data).hexdigest()
        return f"sha256:{digest}"

    def _kind_for(self, question_text: str):
        try:
            return kind_for_question(question_text)
        except UnknownContextError:
            return None

    def _verdict_text(self, image_ref: str, kind) -> tuple:
        if kind.id in self.garble_kinds:
            return "hard to say", None
        meta = {"image_ref": image_ref, "contexts": self.truth.bits_for(image_ref)}
        answer = mock_answer(meta, kind, self.noise, self.seed)
        conf = answer.confidence if self._descriptor.supports_confidence else None
        return answer.raw_text, conf

    def _count_questions(self, request: AskRequest) -> int:
        if request.mode == "joint":
            return sum(
                len(_SUBQUESTION_RE.findall(q.text)) or 1 for q in request.questions
            )
        return len(request.questions)

    def ask(self, request: AskRequest, timeout_ms: Optional[float] = None) -> AskResponse:
        request.validate()
        cost = self.latency.cost_ms(self._count_questions(request))
        if timeout_ms is not None and cost > timeout_ms:
            self.clock.sleep_ms(timeout_ms)
            raise BackendTimeoutError(
                f"mock call of {cost:.1f} ms exceeded the {timeout_ms:.1f} ms deadline",
                failed_query_ids=[q.qid for q in request.questions],
            )
        self.clock.sleep_ms(cost)

        image_ref = self._image_ref(request)
        items = []
        for question in request.questions:
            if request.mode == "joint":
                item = self._answer_joint(image_ref, question)
            else:
                item = self._answer_individual(image_ref, question)
            if item is not None:
                items.append(item)
        return AskResponse(
            id=request.id, answers=tuple(items), backend_latency_ms=cost
        ).validate()

    def _answer_individual(self, image_ref, question) -> Optional[AnswerItem]:
        kind = self._kind_for(question.text)
        if kind is None or kind.id in self.omit_kinds or image_ref not in self.truth:
            return None
        text, conf = self._verdict_text(image_ref, kind)
        return AnswerItem(qid=question.qid, answer_text=text, confidence=conf)

    def _answer_joint(self, image_ref, question) -> Optional[AnswerItem]:
        subquestions = _SUBQUESTION_RE.findall(question.text)
        if not subquestions or image_ref not in self.truth:
            return None
        parts, confs = [], []
        for index, sub in enumerate(subquestions, start=1):
            kind = self._kind_for(sub.strip())
            if kind is None or kind.id in self.omit_kinds or kind.id in self.joint_omit_kinds:
                continue
            text, conf = self._verdict_text(image_ref, kind)
            parts.append(f"{index}. {text}")
            if conf is not None:
                confs.append(conf)
        if not parts:
            return None
        joint_conf = min(confs) if confs else None
        return AnswerItem(
            qid=question.qid, answer_text=" ".join(parts), confidence=joint_conf
        )
