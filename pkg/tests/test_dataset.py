from __future__ import annotations

import json

import pytest

from contextd.annotation import AnnotationRecord
from contextd.dataset import (
    DatasetManifest,
    ImageMeta,
    SplitSpec,
    export_vqa,
    import_vqa,
    import_vqa_dir,
    load_manifest,
    sample_shots,
    save_manifest,
    split,
    stats,
)
from contextd.errors import DataError
from contextd.synthetic import make_balanced_manifest, make_manifest
from contextd.taxonomy import question_for, taxonomy


class TestManifestInvariants:
    def test_complete_manifest_arithmetic(self, small_manifest):
        manifest, _ = small_manifest
        assert manifest.image_count == 6
        assert manifest.record_count == 6 * 24
        assert manifest.is_complete()

    def test_record_for_unknown_image_rejected(self):
        image = ImageMeta("img-1", "img:1", 100, 100, "web")
        record = AnnotationRecord(
            question_id=0, image_id="img-ghost", question=question_for("daytime"),
            answer="yes", origin="hand", source_subset="web",
        )
        with pytest.raises(DataError):
            DatasetManifest("bad", (image,), (record,), "1.0.0")

    def test_duplicate_image_kind_pair_rejected(self):
        image = ImageMeta("img-1", "img:1", 100, 100, "web")
        records = tuple(
            AnnotationRecord(
                question_id=i, image_id="img-1", question=question_for("daytime"),
                answer="yes", origin="hand", source_subset="web",
            )
            for i in range(2)
        )
        with pytest.raises(DataError):
            DatasetManifest("bad", (image,), records, "1.0.0")


class TestInterchange:
    def test_export_import_identity(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        export_vqa(manifest, tmp_path)
        reimported, rejected = import_vqa_dir(tmp_path)
        assert rejected == []
        assert reimported == manifest

    def test_export_is_byte_stable(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        first = export_vqa(manifest, tmp_path / "a")
        reimported, _ = import_vqa_dir(tmp_path / "a")
        second = export_vqa(reimported, tmp_path / "b")
        for name in first:
            assert first[name].read_bytes() == second[name].read_bytes()

    def test_empty_manifest_exports_valid_files(self, tmp_path):
        manifest = DatasetManifest("empty", (), (), "1.0.0")
        export_vqa(manifest, tmp_path)
        reimported, rejected = import_vqa_dir(tmp_path)
        assert reimported.record_count == 0
        assert rejected == []

    def test_core_files_carry_vqa_fields(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        paths = export_vqa(manifest, tmp_path)
        questions = json.loads(paths["questions"].read_text())["questions"]
        assert set(questions[0]) == {"image_id", "question", "question_id"}
        annotations = json.loads(paths["annotations"].read_text())["annotations"]
        assert set(annotations[0]) == {
            "image_id", "question_id", "multiple_choice_answer", "answers",
        }
        assert set(annotations[0]["answers"][0]) == {
            "answer", "answer_confidence", "answer_id",
        }

    def test_mismatched_question_ids_error(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        paths = export_vqa(manifest, tmp_path)
        annotations = json.loads(paths["annotations"].read_text())
        annotations["annotations"] = annotations["annotations"][:-1]
        paths["annotations"].write_text(json.dumps(annotations))
        with pytest.raises(DataError):
            import_vqa_dir(tmp_path)

    def test_unknown_question_rejected_with_report(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        paths = export_vqa(manifest, tmp_path)
        questions = json.loads(paths["questions"].read_text())
        questions["questions"][0]["question"] = "Is the moon full?"
        paths["questions"].write_text(json.dumps(questions))
        reimported, rejected = import_vqa_dir(tmp_path)
        assert len(rejected) == 1
        assert rejected[0]["reason"] == "unknown_question"
        assert reimported.record_count == manifest.record_count - 1

    def test_import_without_side_file_defaults_to_hand(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        paths = export_vqa(manifest, tmp_path)
        paths["side"].unlink()
        reimported, _ = import_vqa(
            paths["questions"], paths["annotations"], paths["images"]
        )
        assert all(r.origin == "hand" for r in reimported.records)
        assert reimported.record_count == manifest.record_count

    def test_manifest_bundle_roundtrip(self, small_manifest, tmp_path):
        manifest, _ = small_manifest
        path = tmp_path / "bundle.json"
        save_manifest(manifest, path)
        assert load_manifest(path) == manifest


class TestStats:
    def test_subset_image_counts(self, small_manifest):
        manifest, _ = small_manifest
        s = stats(manifest)
        assert {k: v["images"] for k, v in s.per_subset.items()} == {"kitti": 4, "web": 2}
        assert s.total_records == sum(v["pairs"] for v in s.per_subset.values())

    def test_per_kind_counts_conserve_image_count(self, small_manifest):
        manifest, _ = small_manifest
        s = stats(manifest)
        for entry in s.per_kind.values():
            assert entry["positives"] + entry["negatives"] == manifest.image_count

    def test_counts_match_truth_store_exactly(self, small_manifest):
        # The truth store the labels were derived from is the oracle.
        manifest, truth = small_manifest
        s = stats(manifest)
        for kind in taxonomy():
            expected = sum(
                truth.bits_for(im.image_ref)[kind.id] for im in manifest.images
            )
            assert s.per_kind[kind.id]["positives"] == expected


class TestSplit:
    def test_seventy_thirty_arithmetic(self):
        manifest, _ = make_manifest("big", {"kitti": 100}, seed=2)
        train, test = split(manifest, SplitSpec(0.7, seed=5))
        assert train.image_count == 70
        assert test.image_count == 30

    def test_deterministic_for_seed(self, small_manifest):
        manifest, _ = small_manifest
        a_train, a_test = split(manifest, SplitSpec(0.7, seed=9))
        b_train, b_test = split(manifest, SplitSpec(0.7, seed=9))
        assert a_train == b_train and a_test == b_test

    def test_partition_laws(self, small_manifest):
        manifest, _ = small_manifest
        train, test = split(manifest, SplitSpec(0.5, seed=4))
        train_ids = {im.image_id for im in train.images}
        test_ids = {im.image_id for im in test.images}
        assert train_ids & test_ids == set()
        assert train_ids | test_ids == {im.image_id for im in manifest.images}
        assert set(train.records) | set(test.records) == set(manifest.records)
        assert set(train.records) & set(test.records) == set()

    def test_too_few_images_error(self):
        manifest, _ = make_manifest("tiny", {"web": 1}, seed=0)
        with pytest.raises(DataError):
            split(manifest, SplitSpec(0.7, seed=0))

    def test_bad_fraction_rejected(self):
        with pytest.raises(DataError):
            SplitSpec(train_fraction=1.0)


class TestSampleShots:
    def test_nesting_across_shot_counts(self):
        manifest, _ = make_balanced_manifest("fewshot", images_per_subset=30, seed=3)
        ids = {}
        for k in (4, 16, 64, 256):
            ids[k] = [r.question_id for r in sample_shots(manifest, k, seed=21)]
        assert ids[4] == ids[16][:4]
        assert ids[16] == ids[64][:16]
        assert ids[64] == ids[256][:64]

    def test_stratification_covers_kinds(self):
        manifest, _ = make_balanced_manifest("fewshot", images_per_subset=10, seed=3)
        shots = sample_shots(manifest, 24, seed=8)
        kinds = {r.kind_id for r in shots}
        assert len(kinds) >= 12  # round-robin actually covers all 24
        assert len(kinds) == 24

    def test_label_balance_where_available(self):
        manifest, _ = make_balanced_manifest("fewshot", images_per_subset=30, seed=3)
        shots = sample_shots(manifest, 48, seed=8)
        yes = sum(1 for r in shots if r.answer == "yes")
        assert 0.3 <= yes / len(shots) <= 0.7

    def test_deterministic(self):
        manifest, _ = make_balanced_manifest("fewshot", images_per_subset=5, seed=3)
        a = [r.question_id for r in sample_shots(manifest, 16, seed=77)]
        b = [r.question_id for r in sample_shots(manifest, 16, seed=77)]
        assert a == b

    def test_requesting_more_than_available_errors(self):
        manifest, _ = make_manifest("tiny", {"web": 1}, seed=0)
        with pytest.raises(DataError):
            sample_shots(manifest, 25, seed=0)

    def test_image_unit_returns_whole_images(self):
        manifest, _ = make_balanced_manifest("fewshot", images_per_subset=5, seed=3)
        records = sample_shots(manifest, 2, seed=5, unit="image")
        assert len({r.image_id for r in records}) == 2
        assert len(records) == 48
