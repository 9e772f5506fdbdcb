"""Small file helpers: atomic writes and canonical JSON text."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def canonical_json(obj) -> str:
    """Stable, diff-friendly JSON text: sorted keys, two-space indent."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file and rename, so outputs are never half-written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
