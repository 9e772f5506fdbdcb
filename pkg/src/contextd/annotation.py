"""Multi-backend agreement annotation, review sampling, and the review flow.

A context label enters the dataset only when every backend returns the same
definitive verdict with confidence strictly above the threshold; everything
else becomes an uncertain item with a reason. Review never rewrites answers,
it only moves records between origins or drops them, with an append-only
audit trail.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import DataError, TransportError
from .queries import Answer, Verdict, recognize
from .taxonomy import (
    kind_for_question,
    resolve_kinds,
    taxonomy_version as builtin_taxonomy_version,
    template_version as builtin_template_version,
)

ORIGINS = ("hand", "machine", "verified")
SOURCE_SUBSETS = ("kitti", "nuscenes", "pittsburgh", "web", "ma_corpus")
UNCERTAIN_REASONS = ("low_confidence", "conflict", "unparseable")

DEFAULT_AGREEMENT_THRESHOLD = 0.9


@dataclass(frozen=True)
class Vote:
    """One backend's verdict on one (image, kind) pair."""

    backend: str
    verdict: Verdict
    confidence: float


@dataclass(frozen=True)
class AnnotationRecord:
    """One image-question-answer triple with provenance."""

    question_id: int
    image_id: str
    question: str
    answer: str
    origin: str
    source_subset: str
    backend_votes: tuple = ()
    taxonomy_version: str = ""
    template_version: str = ""
    verified_at: Optional[float] = None

    def __post_init__(self):
        if self.answer not in ("yes", "no"):
            raise DataError(f"record answer must be yes/no, got {self.answer!r}")
        if self.origin not in ORIGINS:
            raise DataError(f"unknown origin {self.origin!r}")
        if self.source_subset not in SOURCE_SUBSETS:
            raise DataError(f"unknown source subset {self.source_subset!r}")
        object.__setattr__(self, "backend_votes", tuple(self.backend_votes))
        if self.origin == "machine" and not self.backend_votes:
            raise DataError("machine records must carry the backend votes behind them")
        if self.origin == "verified" and self.verified_at is None:
            raise DataError("verified records must carry a reviewer decision timestamp")

    @property
    def kind_id(self) -> str:
        return kind_for_question(self.question).id


@dataclass(frozen=True)
class UncertainItem:
    """A pair the agreement rule declined to label, and why."""

    image_id: str
    kind_id: str
    backend_votes: tuple
    reason: str

    def __post_init__(self):
        if self.reason not in UNCERTAIN_REASONS:
            raise DataError(f"unknown uncertainty reason {self.reason!r}")
        object.__setattr__(self, "backend_votes", tuple(self.backend_votes))


def agreement_decision(votes, threshold: float):
    """Apply the agreement rule to one set of votes.

    Returns ``("yes"|"no", None)`` when a label is emitted, otherwise
    ``(None, reason)``. Emission requires a unanimous definitive verdict
    with every confidence strictly greater than the threshold; unparseable
    votes count as disagreement, never as support.
    """
    votes = list(votes)
    if not votes:
        raise DataError("agreement needs at least one vote")
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must be in (0, 1), got {threshold}")
    definitive = [v for v in votes if v.verdict is not Verdict.UNPARSEABLE]
    verdicts = {v.verdict for v in definitive}
    if len(verdicts) > 1:
        return None, "conflict"
    if len(definitive) < len(votes) or not verdicts:
        return None, "unparseable"
    if all(v.confidence > threshold for v in votes):
        return verdicts.pop().value, None
    return None, "low_confidence"


def machine_annotate(
    image_ref: str,
    kinds,
    backends,
    threshold: float = DEFAULT_AGREEMENT_THRESHOLD,
    *,
    image_id: Optional[str] = None,
    source_subset: str = "ma_corpus",
    emit_negatives: bool = True,
    question_id_start: int = 0,
):
    """Label one image by unanimous high-confidence backend agreement.

    Every backend is asked every kind individually; a backend that fails
    transport-wise contributes unparseable votes (so nothing it was needed
    for gets labeled). With all backends down this raises instead. When
    ``emit_negatives`` is off, unanimous confident "no" pairs are dropped
    rather than recorded; note that disables the records+uncertain=kinds
    conservation that otherwise holds per pass.
    """
    resolved = resolve_kinds(kinds)
    if not backends:
        raise DataError("machine annotation needs at least one backend")
    image_id = image_id if image_id is not None else image_ref

    votes_per_kind = {k.id: [] for k in resolved}
    reachable = 0
    for backend in backends:
        name = backend.descriptor().name
        try:
            answers = recognize(image_ref, resolved, backend, mode="individual")
            reachable += 1
        except TransportError:
            for k in resolved:
                votes_per_kind[k.id].append(Vote(name, Verdict.UNPARSEABLE, 0.0))
            continue
        for k in resolved:
            a = answers[k]
            conf = a.confidence if a.is_definitive else 0.0
            votes_per_kind[k.id].append(Vote(name, a.verdict, conf))
    if reachable == 0:
        raise TransportError(
            f"no backend reachable while annotating {image_ref!r}",
            failed_query_ids=[k.id for k in resolved],
        )

    records, uncertain = [], []
    next_id = question_id_start
    for k in resolved:
        votes = tuple(votes_per_kind[k.id])
        answer, reason = agreement_decision(votes, threshold)
        if answer is None:
            uncertain.append(UncertainItem(image_id, k.id, votes, reason))
        elif answer == "no" and not emit_negatives:
            continue
        else:
            records.append(
                AnnotationRecord(
                    question_id=next_id,
                    image_id=image_id,
                    question=k.question_text,
                    answer=answer,
                    origin="machine",
                    source_subset=source_subset,
                    backend_votes=votes,
                    taxonomy_version=builtin_taxonomy_version(),
                    template_version=builtin_template_version(),
                )
            )
            next_id += 1
    return records, uncertain


def sample_for_review(records, rate: float, seed: int):
    """Deterministic stratified sample of records for human verification.

    Draws ``ceil(rate * len(records))`` items round-robin across per-kind
    groups (each group seeded-shuffled). Representation wins over the exact
    rate: the sample is widened to one item per populated kind when the rate
    alone would leave some kind out.
    """
    records = list(records)
    if not records:
        raise DataError("cannot sample from an empty record set")
    if not 0.0 < rate <= 1.0:
        raise DataError(f"sample rate must be in (0, 1], got {rate}")
    kind_count = len({r.kind_id for r in records})
    target = max(math.ceil(rate * len(records)), min(kind_count, len(records)))

    rng = random.Random(seed)
    groups = {}
    for rec in sorted(records, key=lambda r: r.question_id):
        groups.setdefault(rec.kind_id, []).append(rec)
    for group in groups.values():
        rng.shuffle(group)
    order = sorted(groups)
    rng.shuffle(order)

    sample = []
    depth = 0
    while len(sample) < target:
        took = False
        for kind_id in order:
            group = groups[kind_id]
            if depth < len(group):
                sample.append(group[depth])
                took = True
                if len(sample) == target:
                    break
        if not took:
            break
        depth += 1
    return sample


ACTIONS = ("accept", "reject", "skip")


@dataclass(frozen=True)
class Decision:
    record_id: int
    action: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise DataError(f"unknown review action {self.action!r}")


@dataclass(frozen=True)
class AuditEntry:
    timestamp: float
    record_id: int
    action: str
    outcome: str  # verified | rejected | skipped | unknown

    def to_line(self) -> str:
        return json.dumps(
            {
                "timestamp": self.timestamp,
                "record_id": self.record_id,
                "action": self.action,
                "outcome": self.outcome,
            },
            sort_keys=True,
        )


@dataclass
class ReviewResult:
    records: list
    audit: list


def review(records, decisions: Iterable, *, clock=time.time, audit_path=None) -> ReviewResult:
    """Fold reviewer decisions into the record set.

    accept promotes origin to verified, reject removes the record, skip
    leaves it untouched; a decision naming an unknown record id is logged
    and changes nothing. Answers are never mutated. The audit log is
    append-only, one JSON line per decision.
    """
    by_id = {r.question_id: r for r in records}
    order = [r.question_id for r in records]
    audit = []
    removed = set()
    for dec in decisions:
        if not isinstance(dec, Decision):
            dec = Decision(record_id=int(dec["record_id"]), action=dec["action"])
        ts = clock()
        rec = by_id.get(dec.record_id)
        if rec is None or dec.record_id in removed:
            audit.append(AuditEntry(ts, dec.record_id, dec.action, "unknown"))
            continue
        if dec.action == "accept":
            by_id[dec.record_id] = replace(rec, origin="verified", verified_at=ts)
            audit.append(AuditEntry(ts, dec.record_id, dec.action, "verified"))
        elif dec.action == "reject":
            removed.add(dec.record_id)
            audit.append(AuditEntry(ts, dec.record_id, dec.action, "rejected"))
        else:
            audit.append(AuditEntry(ts, dec.record_id, dec.action, "skipped"))

    if audit_path is not None:
        with Path(audit_path).open("a", encoding="utf-8") as fh:
            for entry in audit:
                fh.write(entry.to_line() + "\n")

    kept = [by_id[qid] for qid in order if qid not in removed]
    return ReviewResult(records=kept, audit=audit)


def load_decisions(path) -> list:
    """Read a batch decisions file: one JSON object per line."""
    out = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            out.append(Decision(record_id=int(raw["record_id"]), action=raw["action"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad decision: {exc}") from exc
    return out
