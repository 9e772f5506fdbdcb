"""Stub answerer: ground truth in, protocol answers out.

Answers are always truthful; confidence is a deterministic per-(image,
kind) draw in [0.95, 1.0] keyed by the configured seed, so two stubs with
the same configuration are byte-identical. A configurable latency model
(fixed per-call overhead plus a per-question delay) emulates real backend
timings for benchmarks.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from pathlib import Path
from typing import Optional

from .questions import QuestionMap

_SUBQUESTION_RE = re.compile(r"(\d+)\.\s*([^?]*\?)")


class TruthStore:
    """One record per image: image_ref plus named boolean context bits."""

    def __init__(self, records: dict):
        self._records = records

    @classmethod
    def load(cls, path) -> "TruthStore":
        records = {}
        for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                records[raw["image_ref"]] = {k: bool(v) for k, v in raw["contexts"].items()}
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad truth record: {exc}") from exc
        return cls(records)

    def bits_for(self, image_ref: str) -> Optional[dict]:
        return self._records.get(image_ref)


def _confidence(seed: int, image_ref: str, kind_id: str) -> float:
    digest = hashlib.sha256(f"{seed}|{image_ref}|{kind_id}".encode("utf-8")).digest()
    unit = int.from_bytes(digest[:8], "big") / 2**64
    return 0.95 + 0.05 * unit


class StubAnswerer:
    def __init__(self, truth: TruthStore, questions: QuestionMap, seed: int = 0,
                 per_question_delay_ms: float = 0.0, per_call_overhead_ms: float = 0.0,
                 supports_joint: bool = True):
        self.truth = truth
        self.questions = questions
        self.seed = seed
        self.per_question_delay_ms = per_question_delay_ms
        self.per_call_overhead_ms = per_call_overhead_ms
        self.supports_joint = supports_joint

    def _one(self, image_ref: str, bits: dict, text: str):
        kind_id = self.questions.kind_for(text)
        if kind_id is None or kind_id not in bits:
            return None
        verdict = "yes" if bits[kind_id] else "no"
        return verdict, _confidence(self.seed, image_ref, kind_id)

    def _count_questions(self, mode: str, questions: list) -> int:
        if mode == "joint":
            return sum(len(_SUBQUESTION_RE.findall(q["text"])) or 1 for q in questions)
        return len(questions)

    def answer(self, request: dict) -> dict:
        """Compute the answers message for one ask request (pre-validated)."""
        mode = request["mode"]
        questions = request["questions"]
        delay_ms = (self.per_call_overhead_ms
                    + self.per_question_delay_ms * self._count_questions(mode, questions))
        if delay_ms > 0:
            time.sleep(delay_ms / 1000.0)

        image = request["image"]
        image_ref = image.get("uri") if image.get("kind") == "locator" else None
        if image_ref is None and image.get("kind") == "inline":
            image_ref = "sha256:" + hashlib.sha256(
                _inline_bytes(image)
            ).hexdigest()
        bits = self.truth.bits_for(image_ref) if image_ref else None

        answers = []
        for question in questions:
            if bits is None:
                continue
            if mode == "joint":
                item = self._answer_joint(image_ref, bits, question)
            else:
                item = self._answer_individual(image_ref, bits, question)
            if item is not None:
                answers.append(item)
        return {
            "type": "answers",
            "id": request["id"],
            "answers": answers,
            "backend_latency_ms": delay_ms,
        }

    def _answer_individual(self, image_ref, bits, question):
        result = self._one(image_ref, bits, question["text"])
        if result is None:
            return None
        verdict, confidence = result
        return {"qid": question["qid"], "answer_text": verdict, "confidence": confidence}

    def _answer_joint(self, image_ref, bits, question):
        items = _SUBQUESTION_RE.findall(question["text"])
        if not items:
            return None
        parts, confidences = [], []
        for index, sub in items:
            result = self._one(image_ref, bits, sub.strip())
            if result is None:
                continue
            verdict, confidence = result
            parts.append(f"{index}. {verdict}")
            confidences.append(confidence)
        if not parts:
            return None
        return {
            "qid": question["qid"],
            "answer_text": " ".join(parts),
            "confidence": min(confidences),
        }


def _inline_bytes(image: dict) -> bytes:
    import base64

    return base64.b64decode(image.get("data", ""))
