"""The closed set of 24 driving contexts and their canonical yes/no questions.

Everything downstream (query building, annotation, scheduling) keys off this
module. The kinds live in a versioned data file (``data/taxonomy.json``) so
that prompts are reproducible: any change to a question template bumps
``template_version`` and is recorded in every annotation produced with it.

The taxonomy is immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Union

from .errors import DataError, UnknownContextError

CATEGORIES = ("lighting", "weather", "road_surface", "location", "structure", "traffic")
SUBSYSTEMS = ("perception", "localization", "planning", "behavior", "controls")
REFRESH_CLASSES = ("fast", "slow")

#: Categories that describe ambient conditions rather than scene structure;
#: these change slowly and are re-queried on the relaxed schedule.
SLOW_CATEGORIES = frozenset({"lighting", "weather"})

KIND_COUNT = 24


@dataclass(frozen=True)
class ContextKind:
    """One binary driving context: identity, metadata, and question template."""

    id: str
    display_name: str
    category: str
    relevant_subsystems: frozenset
    refresh_class: str
    question_text: str

    def __post_init__(self):
        if not self.id or not self.id.islower() or " " in self.id:
            raise DataError(f"context id must be a lowercase token, got {self.id!r}")
        if self.category not in CATEGORIES:
            raise DataError(f"unknown category {self.category!r} for {self.id}")
        subsystems = frozenset(self.relevant_subsystems)
        object.__setattr__(self, "relevant_subsystems", subsystems)
        if not subsystems:
            raise DataError(f"{self.id}: relevant_subsystems must be nonempty")
        unknown = subsystems - set(SUBSYSTEMS)
        if unknown:
            raise DataError(f"{self.id}: unknown subsystems {sorted(unknown)}")
        if self.refresh_class not in REFRESH_CLASSES:
            raise DataError(f"{self.id}: unknown refresh class {self.refresh_class!r}")
        expected = "slow" if self.category in SLOW_CATEGORIES else "fast"
        if self.refresh_class != expected:
            raise DataError(
                f"{self.id}: refresh class must be {expected!r} for category "
                f"{self.category!r}"
            )
        if not self.question_text or not self.question_text.endswith("?"):
            raise DataError(f"{self.id}: question_text must end with '?'")


@dataclass(frozen=True)
class TaxonomyDoc:
    """A versioned taxonomy as read from or written to a data file."""

    taxonomy_version: str
    template_version: str
    kinds: tuple


KindLike = Union[ContextKind, str]


def _kind_from_raw(raw: dict) -> ContextKind:
    try:
        return ContextKind(
            id=raw["id"],
            display_name=raw["display_name"],
            category=raw["category"],
            relevant_subsystems=frozenset(raw["relevant_subsystems"]),
            refresh_class=raw["refresh_class"],
            question_text=raw["question_text"],
        )
    except KeyError as exc:
        raise DataError(f"taxonomy record missing field {exc}") from exc


def _validate_doc(doc: TaxonomyDoc) -> TaxonomyDoc:
    ids = [k.id for k in doc.kinds]
    if len(set(ids)) != len(ids):
        raise DataError("taxonomy ids must be unique")
    questions = [k.question_text for k in doc.kinds]
    if len(set(questions)) != len(questions):
        raise DataError("question templates must be distinct for reverse lookup")
    if not doc.taxonomy_version or not doc.template_version:
        raise DataError("taxonomy and template versions must be nonempty")
    return doc


def parse_taxonomy(text: str) -> TaxonomyDoc:
    """Parse a taxonomy document from its JSON text form."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"taxonomy file is not valid JSON: {exc}") from exc
    kinds = tuple(_kind_from_raw(item) for item in raw.get("kinds", []))
    return _validate_doc(
        TaxonomyDoc(
            taxonomy_version=raw.get("taxonomy_version", ""),
            template_version=raw.get("template_version", ""),
            kinds=kinds,
        )
    )


def load_taxonomy(path) -> TaxonomyDoc:
    """Load and validate a taxonomy data file."""
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def dump_taxonomy(doc: TaxonomyDoc, path) -> None:
    """Write a taxonomy document; ``load_taxonomy`` reproduces it exactly."""
    raw = {
        "taxonomy_version": doc.taxonomy_version,
        "template_version": doc.template_version,
        "kinds": [
            {
                "id": k.id,
                "display_name": k.display_name,
                "category": k.category,
                "relevant_subsystems": sorted(k.relevant_subsystems),
                "refresh_class": k.refresh_class,
                "question_text": k.question_text,
            }
            for k in doc.kinds
        ],
    }
    Path(path).write_text(
        json.dumps(raw, indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )


@lru_cache(maxsize=1)
def builtin_doc() -> TaxonomyDoc:
    """The packaged taxonomy document."""
    text = resources.files("contextd.data").joinpath("taxonomy.json").read_text("utf-8")
    doc = parse_taxonomy(text)
    if len(doc.kinds) != KIND_COUNT:
        raise DataError(f"packaged taxonomy must have {KIND_COUNT} kinds")
    return doc


def taxonomy() -> tuple:
    """All context kinds, in canonical order. Stable across calls."""
    return builtin_doc().kinds


def taxonomy_version() -> str:
    return builtin_doc().taxonomy_version


def template_version() -> str:
    return builtin_doc().template_version


@lru_cache(maxsize=1)
def _by_id() -> dict:
    return {k.id: k for k in taxonomy()}


@lru_cache(maxsize=1)
def _by_question() -> dict:
    return {k.question_text: k for k in taxonomy()}


def kind_by_id(kind_id: str) -> ContextKind:
    """Resolve a context id, raising ``UnknownContextError`` if absent."""
    try:
        return _by_id()[kind_id]
    except KeyError:
        raise UnknownContextError(f"unknown context id {kind_id!r}") from None


def resolve_kind(kind: KindLike) -> ContextKind:
    """Accept either a ``ContextKind`` or its id."""
    if isinstance(kind, ContextKind):
        if kind.id not in _by_id():
            raise UnknownContextError(f"kind {kind.id!r} is not in the taxonomy")
        return kind
    return kind_by_id(kind)


def resolve_kinds(kinds: Iterable[KindLike]) -> tuple:
    return tuple(resolve_kind(k) for k in kinds)


def question_for(kind: KindLike) -> str:
    """The canonical yes/no question template for a kind."""
    return resolve_kind(kind).question_text


def kind_for_question(question: str) -> ContextKind:
    """Reverse lookup from a question template back to its kind.

    Templates are distinct by construction, so this is injective; it is how
    imported records and stub backends recover the kind behind a question.
    """
    try:
        return _by_question()[question.strip()]
    except KeyError:
        raise UnknownContextError(f"no taxonomy question matches {question!r}") from None


def subsystems_for(kind: KindLike) -> frozenset:
    """The AV subsystems whose behavior depends on this context."""
    return resolve_kind(kind).relevant_subsystems


def kind_index(kind: KindLike) -> int:
    """Position of a kind in canonical taxonomy order."""
    target = resolve_kind(kind)
    for i, k in enumerate(taxonomy()):
        if k.id == target.id:
            return i
    raise UnknownContextError(f"kind {target.id!r} not in taxonomy")


def all_kind_ids() -> tuple:
    return tuple(k.id for k in taxonomy())
