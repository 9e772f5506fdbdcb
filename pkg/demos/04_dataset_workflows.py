"""Dataset plumbing: VQA-format export/import, distribution stats,
train/test splitting, and nested few-shot sampling.

Run: python demos/04_dataset_workflows.py
"""

import tempfile
from pathlib import Path

from contextd.dataset import (
    SplitSpec, export_vqa, import_vqa_dir, render_stats_table, sample_shots,
    split, stats,
)
from contextd.synthetic import make_manifest

manifest, truth = make_manifest(
    "demo", {"kitti": 20, "nuscenes": 12, "pittsburgh": 10, "web": 8}, seed=3
)
print(f"built {manifest.image_count} images -> {manifest.record_count} pairs "
      f"(complete: {manifest.is_complete()})\n")

with tempfile.TemporaryDirectory() as out:
    paths = export_vqa(manifest, out)
    print("exported:", ", ".join(p.name for p in paths.values()))
    reimported, rejected = import_vqa_dir(out)
    print("import is the identity:", reimported == manifest,
          f"(rejected {len(rejected)})\n")

print(render_stats_table(stats(manifest)))

train, test = split(manifest, SplitSpec(train_fraction=0.7, seed=11))
print(f"\n70:30 split -> train {train.image_count} images, test {test.image_count}")

print("\nnested few-shot samples (same seed):")
previous = []
for k in (4, 16, 64):
    shots = sample_shots(train, k, seed=21)
    prefix_ok = [r.question_id for r in shots[: len(previous)]] == [
        r.question_id for r in previous
    ]
    kinds = len({r.kind_id for r in shots})
    yes = sum(1 for r in shots if r.answer == "yes")
    print(f"  k={k:<3} kinds={kinds:<3} yes/no={yes}/{k - yes} "
          f"extends previous: {prefix_ok}")
    previous = shots
