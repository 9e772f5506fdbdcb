"""Question-template lookup from the published taxonomy data file.

The stub maps incoming question text to a context id by exact template
match against the taxonomy file the orchestrator publishes (a versioned
JSON document; see PROTOCOL.md). This keeps prompts and truth bits in
lockstep without importing the orchestrator.
"""

from __future__ import annotations

import json
from pathlib import Path


class QuestionMap:
    def __init__(self, question_to_kind: dict, version: str):
        self._map = dict(question_to_kind)
        self.version = version

    @classmethod
    def load(cls, taxonomy_path) -> "QuestionMap":
        raw = json.loads(Path(taxonomy_path).read_text("utf-8"))
        mapping = {}
        for kind in raw.get("kinds", []):
            mapping[kind["question_text"].strip()] = kind["id"]
        if not mapping:
            raise ValueError(f"taxonomy file {taxonomy_path!r} defines no questions")
        return cls(mapping, raw.get("taxonomy_version", ""))

    def kind_for(self, question_text: str):
        return self._map.get(question_text.strip())

    def __len__(self) -> int:
        return len(self._map)
