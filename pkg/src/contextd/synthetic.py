"""Synthetic fixtures: seeded ground truth and fully labeled manifests.

No real images exist here; image refs are opaque tokens and every label is
derived from a seeded truth table, which makes the mock backend an exact
oracle for anything built on top.
"""

from __future__ import annotations

import random

from .annotation import AnnotationRecord
from .dataset import DatasetManifest, ImageMeta
from .protocol.mock import GroundTruthStore
from .taxonomy import taxonomy, taxonomy_version, template_version

#: Plausible camera geometries per source subset.
_DIMENSIONS = {
    "kitti": (1242, 375),
    "nuscenes": (1600, 900),
    "pittsburgh": (1920, 1080),
    "web": (100, 100),
    "ma_corpus": (2048, 1536),
}


def make_truth(image_refs, seed: int = 0, positive_rate: float = 0.5) -> GroundTruthStore:
    """Seeded random truth bits for every kind of every image."""
    rng = random.Random(seed)
    store = GroundTruthStore()
    for ref in image_refs:
        store.put(ref, {k.id: rng.random() < positive_rate for k in taxonomy()})
    return store


def make_manifest(
    name: str,
    subset_sizes: dict,
    seed: int = 0,
    positive_rate: float = 0.5,
):
    """A complete labeled manifest plus the truth store its labels came from.

    ``subset_sizes`` maps source subsets to image counts, e.g.
    ``{"kitti": 500, "nuscenes": 300, "pittsburgh": 321, "web": 346}``.
    Every image gets one record per kind, so the manifest is complete and
    the mock backend over the returned truth answers it perfectly.
    """
    images = []
    for subset in sorted(subset_sizes):
        width, height = _DIMENSIONS[subset]
        for i in range(subset_sizes[subset]):
            image_id = f"{subset}-{i:06d}"
            images.append(
                ImageMeta(
                    image_id=image_id,
                    image_ref=f"img:{image_id}",
                    width=width,
                    height=height,
                    source_subset=subset,
                )
            )

    truth = make_truth([im.image_ref for im in images], seed=seed, positive_rate=positive_rate)

    records = []
    qid = 0
    for im in images:
        bits = truth.bits_for(im.image_ref)
        for kind in taxonomy():
            records.append(
                AnnotationRecord(
                    question_id=qid,
                    image_id=im.image_id,
                    question=kind.question_text,
                    answer="yes" if bits[kind.id] else "no",
                    origin="hand",
                    source_subset=im.source_subset,
                    taxonomy_version=taxonomy_version(),
                    template_version=template_version(),
                )
            )
            qid += 1

    manifest = DatasetManifest(
        name=name,
        images=tuple(images),
        records=tuple(records),
        taxonomy_version=taxonomy_version(),
    )
    return manifest, truth


def make_balanced_manifest(name: str, images_per_subset: int = 10, seed: int = 0):
    """A small manifest where every kind has both labels available,
    for sampling and few-shot fixtures."""
    sizes = {"kitti": images_per_subset, "nuscenes": images_per_subset}
    return make_manifest(name, sizes, seed=seed, positive_rate=0.5)
