"""contextd: driving-context recognition from camera frames via VQA backends.

A frame plus the 24-context taxonomy becomes a set of yes/no queries against
a vision-language inference backend; answers fold into a live context state
published to downstream AV subsystems. The package also carries the dataset
annotation, storage, and evaluation machinery needed to build and score such
a system.
"""

from .taxonomy import (
    ContextKind,
    KIND_COUNT,
    all_kind_ids,
    kind_by_id,
    kind_for_question,
    question_for,
    subsystems_for,
    taxonomy,
    taxonomy_version,
    template_version,
)
from .queries import (
    Answer,
    ContextQuery,
    Verdict,
    build_individual_queries,
    build_joint_query,
    parse_individual_answer,
    parse_joint_answer,
    recognize,
)

__version__ = "0.1.0"

__all__ = [
    "ContextKind",
    "KIND_COUNT",
    "all_kind_ids",
    "kind_by_id",
    "kind_for_question",
    "question_for",
    "subsystems_for",
    "taxonomy",
    "taxonomy_version",
    "template_version",
    "Answer",
    "ContextQuery",
    "Verdict",
    "build_individual_queries",
    "build_joint_query",
    "parse_individual_answer",
    "parse_joint_answer",
    "recognize",
    "__version__",
]
