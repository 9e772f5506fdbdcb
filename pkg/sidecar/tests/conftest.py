from __future__ import annotations

from pathlib import Path

import pytest

from vqa_sidecar.server import SidecarConfig, SidecarServer

REPO_ROOT = Path(__file__).resolve().parents[2]
TAXONOMY_PATH = REPO_ROOT / "src" / "contextd" / "data" / "taxonomy.json"


def taxonomy_bits(flag) -> dict:
    """Truth bits keyed by the kind ids published in the taxonomy file."""
    import json

    kinds = json.loads(TAXONOMY_PATH.read_text())["kinds"]
    return {k["id"]: flag(i) for i, k in enumerate(kinds)}


@pytest.fixture
def truth_file(tmp_path):
    import json

    bits = taxonomy_bits(lambda i: i % 2 == 0)
    path = tmp_path / "truth.jsonl"
    path.write_text(json.dumps({"image_ref": "img:one", "contexts": bits}) + "\n")
    return path, bits


def make_server(truth_path, **overrides) -> SidecarServer:
    config = SidecarConfig(
        mode="stub",
        truth_path=str(truth_path),
        taxonomy_path=str(TAXONOMY_PATH),
        **overrides,
    )
    return SidecarServer(config)
