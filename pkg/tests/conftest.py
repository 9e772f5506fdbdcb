from __future__ import annotations

import pytest

from contextd.protocol.mock import GroundTruthStore, MockBackend
from contextd.synthetic import make_manifest
from contextd.taxonomy import taxonomy


def alternating_bits(offset: int = 0) -> dict:
    """A fixed, easily reasoned-about truth pattern."""
    return {k.id: ((i + offset) % 2 == 0) for i, k in enumerate(taxonomy())}


@pytest.fixture
def truth_one_image() -> GroundTruthStore:
    return GroundTruthStore({"img:one": alternating_bits()})


@pytest.fixture
def perfect_backend(truth_one_image) -> MockBackend:
    return MockBackend(truth_one_image)


@pytest.fixture
def small_manifest():
    manifest, truth = make_manifest("small", {"kitti": 4, "web": 2}, seed=11)
    return manifest, truth
