"""Dataset storage: VQA-style import/export, stats, splits, few-shot samples.

A manifest is an immutable value: image metadata plus one annotation record
per (image, kind) pair. The interchange format is a pair of VQA-compatible
core files (questions, annotations) that stock tooling can read, a catalog
of image metadata, and a side file carrying this package's extension fields
(origin, votes, versions) so that export followed by import is the identity.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .annotation import AnnotationRecord, SOURCE_SUBSETS, Vote
from .errors import DataError, UnknownContextError
from .fileio import atomic_write_text, canonical_json
from .queries import Verdict
from .taxonomy import (
    KIND_COUNT,
    kind_for_question,
    kind_index,
    taxonomy,
    taxonomy_version as builtin_taxonomy_version,
)

QUESTIONS_FILE = "questions.json"
ANNOTATIONS_FILE = "annotations.json"
IMAGES_FILE = "images.json"
SIDE_FILE = "extensions.jsonl"


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    image_ref: str
    width: int
    height: int
    source_subset: str

    def __post_init__(self):
        if not self.image_id:
            raise DataError("image_id must be nonempty")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"{self.image_id}: image dimensions must be positive")
        if self.source_subset not in SOURCE_SUBSETS:
            raise DataError(f"{self.image_id}: unknown subset {self.source_subset!r}")


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    images: tuple
    records: tuple
    taxonomy_version: str

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "records", tuple(self.records))
        image_ids = [im.image_id for im in self.images]
        if len(set(image_ids)) != len(image_ids):
            raise DataError("duplicate image ids in manifest")
        known = set(image_ids)
        seen_pairs = set()
        seen_qids = set()
        for rec in self.records:
            if rec.image_id not in known:
                raise DataError(f"record {rec.question_id} references unknown image {rec.image_id!r}")
            if rec.question_id in seen_qids:
                raise DataError(f"duplicate question_id {rec.question_id}")
            seen_qids.add(rec.question_id)
            pair = (rec.image_id, rec.kind_id)
            if pair in seen_pairs:
                raise DataError(f"duplicate (image, kind) pair {pair}")
            seen_pairs.add(pair)

    @property
    def image_count(self) -> int:
        return len(self.images)

    @property
    def record_count(self) -> int:
        return len(self.records)

    def is_complete(self) -> bool:
        """True when every image carries exactly one record per kind."""
        return self.record_count == self.image_count * KIND_COUNT

    def image_by_id(self, image_id: str) -> ImageMeta:
        for im in self.images:
            if im.image_id == image_id:
                return im
        raise DataError(f"no image {image_id!r} in manifest")

    def records_for_image(self, image_id: str) -> list:
        return [r for r in self.records if r.image_id == image_id]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train fraction must be in (0, 1), got {self.train_fraction}")


# ---------------------------------------------------------------------------
# VQA-compatible interchange


def _vote_to_raw(vote: Vote) -> dict:
    return {
        "backend": vote.backend,
        "verdict": vote.verdict.value,
        "confidence": vote.confidence,
    }


def _vote_from_raw(raw: dict) -> Vote:
    return Vote(
        backend=raw["backend"],
        verdict=Verdict(raw["verdict"]),
        confidence=float(raw["confidence"]),
    )


def _confidence_word(confidence: float) -> str:
    # The core annotations file mirrors the coarse confidence vocabulary of
    # stock VQA tooling; exact numeric confidences live in the side file.
    if confidence >= 0.9:
        return "yes"
    if confidence >= 0.5:
        return "maybe"
    return "no"


def export_vqa(manifest: DatasetManifest, out_dir) -> dict:
    """Write the four interchange files under ``out_dir``; returns their paths.

    Output is canonical (records ordered by question_id, sorted keys), so
    exporting the same manifest twice yields byte-identical files.
    """
    out_dir = Path(out_dir)
    records = sorted(manifest.records, key=lambda r: r.question_id)

    questions = {
        "questions": [
            {"image_id": r.image_id, "question": r.question, "question_id": r.question_id}
            for r in records
        ]
    }
    annotations = {"annotations": []}
    for r in records:
        if r.backend_votes:
            answers = [
                {
                    "answer": v.verdict.value,
                    "answer_confidence": _confidence_word(v.confidence),
                    "answer_id": i,
                }
                for i, v in enumerate(r.backend_votes, start=1)
            ]
        else:
            answers = [{"answer": r.answer, "answer_confidence": "yes", "answer_id": 1}]
        annotations["annotations"].append(
            {
                "image_id": r.image_id,
                "question_id": r.question_id,
                "multiple_choice_answer": r.answer,
                "answers": answers,
            }
        )
    images = {
        "name": manifest.name,
        "taxonomy_version": manifest.taxonomy_version,
        "images": [
            {
                "image_id": im.image_id,
                "image_ref": im.image_ref,
                "width": im.width,
                "height": im.height,
                "source_subset": im.source_subset,
            }
            for im in sorted(manifest.images, key=lambda im: im.image_id)
        ],
    }
    side_lines = []
    for r in records:
        side_lines.append(
            json.dumps(
                {
                    "question_id": r.question_id,
                    "origin": r.origin,
                    "source_subset": r.source_subset,
                    "backend_votes": [_vote_to_raw(v) for v in r.backend_votes],
                    "taxonomy_version": r.taxonomy_version,
                    "template_version": r.template_version,
                    "verified_at": r.verified_at,
                },
                sort_keys=True,
            )
        )

    paths = {
        "questions": out_dir / QUESTIONS_FILE,
        "annotations": out_dir / ANNOTATIONS_FILE,
        "images": out_dir / IMAGES_FILE,
        "side": out_dir / SIDE_FILE,
    }
    atomic_write_text(paths["questions"], canonical_json(questions))
    atomic_write_text(paths["annotations"], canonical_json(annotations))
    atomic_write_text(paths["images"], canonical_json(images))
    atomic_write_text(paths["side"], "\n".join(side_lines) + ("\n" if side_lines else ""))
    return paths


def _load_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} file {path} is malformed: {exc}") from exc


def import_vqa(questions_path, annotations_path, images_path, side_path=None):
    """Build a manifest from interchange files.

    Returns ``(manifest, rejected)`` where ``rejected`` reports questions
    whose text matches no taxonomy template (they are excluded, not fatal).
    Mismatched question_id sets, unknown images, and duplicate (image, kind)
    pairs are hard errors.
    """
    questions_raw = _load_json(questions_path, "questions")
    annotations_raw = _load_json(annotations_path, "annotations")
    images_raw = _load_json(images_path, "images")

    try:
        questions = {int(q["question_id"]): q for q in questions_raw["questions"]}
        annotations = {int(a["question_id"]): a for a in annotations_raw["annotations"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"interchange files missing required fields: {exc}") from exc

    if set(questions) != set(annotations):
        only_q = sorted(set(questions) - set(annotations))[:5]
        only_a = sorted(set(annotations) - set(questions))[:5]
        raise DataError(
            f"question_id sets differ between questions and annotations "
            f"(only in questions: {only_q}, only in annotations: {only_a})"
        )

    side = {}
    if side_path is not None and Path(side_path).exists():
        for lineno, line in enumerate(Path(side_path).read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                side[int(raw["question_id"])] = raw
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{side_path}:{lineno}: bad extension record: {exc}") from exc

    try:
        images = tuple(
            ImageMeta(
                image_id=im["image_id"],
                image_ref=im["image_ref"],
                width=int(im["width"]),
                height=int(im["height"]),
                source_subset=im["source_subset"],
            )
            for im in images_raw["images"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"image catalog is malformed: {exc}") from exc
    subset_by_image = {im.image_id: im.source_subset for im in images}

    records = []
    rejected = []
    for qid in sorted(questions):
        q = questions[qid]
        a = annotations[qid]
        text = q.get("question", "")
        try:
            kind_for_question(text)
        except UnknownContextError:
            rejected.append(
                {"question_id": qid, "question": text, "reason": "unknown_question"}
            )
            continue
        answer = a.get("multiple_choice_answer")
        if answer not in ("yes", "no"):
            rejected.append(
                {"question_id": qid, "question": text, "reason": "non_binary_answer"}
            )
            continue
        image_id = q.get("image_id")
        if image_id != a.get("image_id"):
            raise DataError(f"question {qid}: image_id differs between files")
        if image_id not in subset_by_image:
            raise DataError(f"question {qid} references unknown image {image_id!r}")
        ext = side.get(qid, {})
        records.append(
            AnnotationRecord(
                question_id=qid,
                image_id=image_id,
                question=text,
                answer=answer,
                origin=ext.get("origin", "hand"),
                source_subset=ext.get("source_subset", subset_by_image[image_id]),
                backend_votes=tuple(_vote_from_raw(v) for v in ext.get("backend_votes", [])),
                taxonomy_version=ext.get("taxonomy_version", ""),
                template_version=ext.get("template_version", ""),
                verified_at=ext.get("verified_at"),
            )
        )

    manifest = DatasetManifest(
        name=images_raw.get("name", "imported"),
        images=images,
        records=tuple(records),
        taxonomy_version=images_raw.get("taxonomy_version", builtin_taxonomy_version()),
    )
    return manifest, rejected


def import_vqa_dir(directory, name_hint: Optional[str] = None):
    """Import from a directory laid out by :func:`export_vqa`."""
    directory = Path(directory)
    manifest, rejected = import_vqa(
        directory / QUESTIONS_FILE,
        directory / ANNOTATIONS_FILE,
        directory / IMAGES_FILE,
        directory / SIDE_FILE,
    )
    return manifest, rejected


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class DatasetStats:
    per_kind: dict           # kind_id -> {"positives", "negatives", "total"}
    per_subset: dict         # subset -> {"images", "pairs"}
    total_images: int
    total_records: int


def stats(manifest: DatasetManifest) -> DatasetStats:
    """Counts per kind and per source subset, for distribution tables."""
    per_kind = {k.id: {"positives": 0, "negatives": 0, "total": 0} for k in taxonomy()}
    per_subset = {}
    for im in manifest.images:
        bucket = per_subset.setdefault(im.source_subset, {"images": 0, "pairs": 0})
        bucket["images"] += 1
    subset_by_image = {im.image_id: im.source_subset for im in manifest.images}
    for rec in manifest.records:
        entry = per_kind[rec.kind_id]
        entry["total"] += 1
        entry["positives" if rec.answer == "yes" else "negatives"] += 1
        per_subset[subset_by_image[rec.image_id]]["pairs"] += 1
    return DatasetStats(
        per_kind=per_kind,
        per_subset=per_subset,
        total_images=manifest.image_count,
        total_records=manifest.record_count,
    )


def render_stats_table(s: DatasetStats) -> str:
    lines = [f"{'context':<22} {'yes':>8} {'no':>8} {'total':>8}"]
    for kind_id, entry in s.per_kind.items():
        lines.append(
            f"{kind_id:<22} {entry['positives']:>8} {entry['negatives']:>8} {entry['total']:>8}"
        )
    lines.append("")
    lines.append(f"{'subset':<22} {'images':>8} {'pairs':>8}")
    for subset in sorted(s.per_subset):
        entry = s.per_subset[subset]
        lines.append(f"{subset:<22} {entry['images']:>8} {entry['pairs']:>8}")
    lines.append("")
    lines.append(f"total images {s.total_images}, total pairs {s.total_records}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Splitting and few-shot sampling


def _submanifest(manifest: DatasetManifest, image_ids, suffix: str) -> DatasetManifest:
    keep = set(image_ids)
    return DatasetManifest(
        name=f"{manifest.name}{suffix}",
        images=tuple(im for im in manifest.images if im.image_id in keep),
        records=tuple(r for r in manifest.records if r.image_id in keep),
        taxonomy_version=manifest.taxonomy_version,
    )


def split(manifest: DatasetManifest, spec: SplitSpec):
    """Image-level train/test partition: no image appears on both sides."""
    if manifest.image_count < 2:
        raise DataError("need at least two images to split")
    ids = sorted(im.image_id for im in manifest.images)
    rng = random.Random(spec.seed)
    rng.shuffle(ids)
    n_train = round(spec.train_fraction * len(ids))
    n_train = min(max(n_train, 1), len(ids) - 1)
    return (
        _submanifest(manifest, ids[:n_train], "/train"),
        _submanifest(manifest, ids[n_train:], "/test"),
    )


def _shot_permutation(manifest: DatasetManifest, seed: int) -> list:
    """A stratified, label-alternating order over all records.

    Built once per seed; the k-shot sample is its prefix, which makes the
    samples nested (k1 < k2 implies the k1 sample is a prefix of the k2
    sample) and any prefix as balanced across kinds and labels as
    availability allows.
    """
    rng = random.Random(seed)
    groups = {}
    for rec in sorted(manifest.records, key=lambda r: r.question_id):
        groups.setdefault(rec.kind_id, {"yes": [], "no": []})[rec.answer].append(rec)

    streams = {}
    for kind_id, sides in groups.items():
        rng.shuffle(sides["yes"])
        rng.shuffle(sides["no"])
        merged = []
        for pos in range(max(len(sides["yes"]), len(sides["no"]))):
            if pos < len(sides["yes"]):
                merged.append(sides["yes"][pos])
            if pos < len(sides["no"]):
                merged.append(sides["no"][pos])
        streams[kind_id] = merged

    order = sorted(streams, key=kind_index)
    rng.shuffle(order)

    permutation = []
    depth = 0
    while any(depth < len(streams[k]) for k in order):
        for kind_id in order:
            stream = streams[kind_id]
            if depth < len(stream):
                permutation.append(stream[depth])
        depth += 1
    return permutation


def sample_shots(manifest: DatasetManifest, k: int, seed: int, unit: str = "pair"):
    """Draw a deterministic few-shot subset of ``k`` image-query pairs.

    Samples for growing ``k`` under the same seed are nested, so few-shot
    curves are monotone in data. ``unit="image"`` instead samples ``k``
    whole images and returns all their pairs.
    """
    if k <= 0:
        raise DataError(f"shot count must be positive, got {k}")
    if unit == "image":
        if k > manifest.image_count:
            raise DataError(f"asked for {k} images, only {manifest.image_count} available")
        ids = sorted(im.image_id for im in manifest.images)
        rng = random.Random(seed)
        rng.shuffle(ids)
        keep = set(ids[:k])
        return [r for r in manifest.records if r.image_id in keep]
    if unit != "pair":
        raise DataError(f"unknown shot unit {unit!r}")
    if k > manifest.record_count:
        raise DataError(f"asked for {k} pairs, only {manifest.record_count} available")
    return _shot_permutation(manifest, seed)[:k]


# ---------------------------------------------------------------------------
# Single-file manifest bundle (CLI handoff format)


def save_manifest(manifest: DatasetManifest, path) -> None:
    raw = {
        "name": manifest.name,
        "taxonomy_version": manifest.taxonomy_version,
        "images": [
            {
                "image_id": im.image_id,
                "image_ref": im.image_ref,
                "width": im.width,
                "height": im.height,
                "source_subset": im.source_subset,
            }
            for im in manifest.images
        ],
        "records": [
            {
                "question_id": r.question_id,
                "image_id": r.image_id,
                "question": r.question,
                "answer": r.answer,
                "origin": r.origin,
                "source_subset": r.source_subset,
                "backend_votes": [_vote_to_raw(v) for v in r.backend_votes],
                "taxonomy_version": r.taxonomy_version,
                "template_version": r.template_version,
                "verified_at": r.verified_at,
            }
            for r in manifest.records
        ],
    }
    atomic_write_text(path, canonical_json(raw))


def load_manifest(path) -> DatasetManifest:
    raw = _load_json(path, "manifest")
    try:
        return DatasetManifest(
            name=raw["name"],
            images=tuple(
                ImageMeta(
                    image_id=im["image_id"],
                    image_ref=im["image_ref"],
                    width=int(im["width"]),
                    height=int(im["height"]),
                    source_subset=im["source_subset"],
                )
                for im in raw["images"]
            ),
            records=tuple(
                AnnotationRecord(
                    question_id=int(r["question_id"]),
                    image_id=r["image_id"],
                    question=r["question"],
                    answer=r["answer"],
                    origin=r["origin"],
                    source_subset=r["source_subset"],
                    backend_votes=tuple(_vote_from_raw(v) for v in r["backend_votes"]),
                    taxonomy_version=r["taxonomy_version"],
                    template_version=r["template_version"],
                    verified_at=r["verified_at"],
                )
                for r in raw["records"]
            ),
            taxonomy_version=raw["taxonomy_version"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"manifest bundle {path} is malformed: {exc}") from exc
