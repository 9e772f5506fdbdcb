from __future__ import annotations

import itertools
import json

import pytest

from contextd.annotation import (
    AnnotationRecord,
    Decision,
    UncertainItem,
    Vote,
    agreement_decision,
    load_decisions,
    machine_annotate,
    review,
    sample_for_review,
)
from contextd.errors import DataError, TransportError
from contextd.protocol.mock import GroundTruthStore, MockBackend, NoiseModel
from contextd.queries import Verdict
from contextd.taxonomy import question_for, taxonomy

from conftest import alternating_bits


def vote(verdict, confidence, backend="b"):
    v = Verdict(verdict) if isinstance(verdict, str) else verdict
    return Vote(backend=backend, verdict=v, confidence=confidence)


class TestAgreementRule:
    def test_unanimous_confident_yes_is_recorded(self):
        answer, reason = agreement_decision([vote("yes", 0.95), vote("yes", 0.93)], 0.9)
        assert answer == "yes" and reason is None

    def test_exactly_at_threshold_is_not_enough(self):
        answer, reason = agreement_decision([vote("yes", 0.95), vote("yes", 0.90)], 0.9)
        assert answer is None and reason == "low_confidence"

    def test_conflicting_verdicts(self):
        answer, reason = agreement_decision([vote("yes", 0.95), vote("no", 0.97)], 0.9)
        assert answer is None and reason == "conflict"

    def test_unparseable_vote_blocks_the_label(self):
        answer, reason = agreement_decision(
            [vote("yes", 0.99), vote("unparseable", 0.0)], 0.9
        )
        assert answer is None and reason == "unparseable"

    def test_unanimous_confident_no_is_recorded(self):
        answer, reason = agreement_decision([vote("no", 0.96), vote("no", 0.99)], 0.9)
        assert answer == "no" and reason is None

    def test_truth_table_matches_independent_enumeration(self):
        # Brute force over every 2-backend vote combination on the fixed
        # confidence grid; the oracle below restates the rule from scratch.
        verdicts = [Verdict.YES, Verdict.NO, Verdict.UNPARSEABLE]
        grid = [0.0, 0.5, 0.89, 0.90, 0.901, 0.95, 1.0]
        threshold = 0.9

        def oracle(v1, c1, v2, c2):
            if v1 == v2 and v1 in (Verdict.YES, Verdict.NO) and min(c1, c2) > threshold:
                return v1.value
            return None

        combos = itertools.product(verdicts, grid, verdicts, grid)
        for v1, c1, v2, c2 in combos:
            votes = [vote(v1, c1 if v1 is not Verdict.UNPARSEABLE else 0.0, "a"),
                     vote(v2, c2 if v2 is not Verdict.UNPARSEABLE else 0.0, "b")]
            expected = oracle(
                v1, votes[0].confidence, v2, votes[1].confidence
            )
            answer, reason = agreement_decision(votes, threshold)
            assert answer == expected, (v1, c1, v2, c2)
            if expected is None:
                assert reason in ("low_confidence", "conflict", "unparseable")

    def test_reason_classification_is_consistent_with_votes(self):
        # conflict exactly when definitive verdicts are mixed
        _, reason = agreement_decision(
            [vote("yes", 0.99), vote("no", 0.99), vote("unparseable", 0.0)], 0.9
        )
        assert reason == "conflict"
        _, reason = agreement_decision([vote("yes", 0.2), vote("yes", 0.1)], 0.9)
        assert reason == "low_confidence"

    def test_monotone_in_threshold(self):
        votes_sets = [
            [vote("yes", c1, "a"), vote("yes", c2, "b")]
            for c1 in (0.5, 0.91, 0.95, 1.0)
            for c2 in (0.5, 0.91, 0.95, 1.0)
        ]
        thresholds = [0.5, 0.7, 0.9, 0.95, 0.99]
        for lo, hi in zip(thresholds, thresholds[1:]):
            emitted_lo = {
                i for i, votes in enumerate(votes_sets)
                if agreement_decision(votes, lo)[0] is not None
            }
            emitted_hi = {
                i for i, votes in enumerate(votes_sets)
                if agreement_decision(votes, hi)[0] is not None
            }
            assert emitted_hi <= emitted_lo


class TestMachineAnnotate:
    def test_two_perfect_backends_label_everything(self, truth_one_image):
        backends = [
            MockBackend(truth_one_image, seed=1, name="a"),
            MockBackend(truth_one_image, seed=2, name="b"),
        ]
        records, uncertain = machine_annotate("img:one", taxonomy(), backends, 0.9)
        assert len(records) + len(uncertain) == 24
        assert len(records) == 24  # default confidences are all above 0.95
        bits = alternating_bits()
        for record in records:
            assert (record.answer == "yes") == bits[record.kind_id]
            assert record.origin == "machine"
            assert len(record.backend_votes) == 2
            assert record.taxonomy_version

    def test_opposed_backends_conflict_everywhere(self, truth_one_image):
        backends = [
            MockBackend(truth_one_image, seed=1, name="honest"),
            MockBackend(truth_one_image, noise=NoiseModel(flip_prob=1.0), seed=1, name="liar"),
        ]
        records, uncertain = machine_annotate("img:one", taxonomy(), backends, 0.9)
        assert records == []
        assert len(uncertain) == 24
        assert all(u.reason == "conflict" for u in uncertain)

    def test_dead_backend_votes_unparseable(self, truth_one_image):
        class DeadBackend:
            def descriptor(self):
                return MockBackend(truth_one_image, name="dead").descriptor()

            def ask(self, request, timeout_ms=None):
                raise TransportError("unplugged")

        backends = [MockBackend(truth_one_image, name="alive"), DeadBackend()]
        records, uncertain = machine_annotate("img:one", taxonomy(), backends, 0.9)
        assert records == []
        assert all(u.reason == "unparseable" for u in uncertain)

    def test_all_backends_dead_is_an_error(self, truth_one_image):
        class DeadBackend:
            def descriptor(self):
                return MockBackend(truth_one_image, name="dead").descriptor()

            def ask(self, request, timeout_ms=None):
                raise TransportError("unplugged")

        with pytest.raises(TransportError):
            machine_annotate("img:one", taxonomy(), [DeadBackend()], 0.9)

    def test_emit_negatives_off_drops_unanimous_no(self, truth_one_image):
        backends = [MockBackend(truth_one_image, name="a")]
        bits = alternating_bits()
        positives = sum(bits.values())
        records, uncertain = machine_annotate(
            "img:one", taxonomy(), backends, 0.9, emit_negatives=False
        )
        assert len(records) == positives
        assert all(r.answer == "yes" for r in records)
        assert uncertain == []

    def test_question_ids_sequential_from_start(self, truth_one_image):
        backends = [MockBackend(truth_one_image, name="a")]
        records, _ = machine_annotate(
            "img:one", taxonomy(), backends, 0.9, question_id_start=100
        )
        assert [r.question_id for r in records] == list(range(100, 124))

    def test_threshold_monotonicity_end_to_end(self, truth_one_image):
        backends = [
            MockBackend(truth_one_image, seed=3, name="a"),
            MockBackend(truth_one_image, seed=4, name="b"),
        ]
        emitted = {}
        for threshold in (0.5, 0.9, 0.97, 0.99):
            records, _ = machine_annotate("img:one", taxonomy(), backends, threshold)
            emitted[threshold] = {r.kind_id for r in records}
        assert emitted[0.99] <= emitted[0.97] <= emitted[0.9] <= emitted[0.5]


def make_records(n_per_kind: int, kinds=None) -> list:
    kinds = list(kinds or taxonomy())
    records = []
    qid = 0
    for kind in kinds:
        for i in range(n_per_kind):
            records.append(
                AnnotationRecord(
                    question_id=qid,
                    image_id=f"img-{kind.id}-{i}",
                    question=kind.question_text,
                    answer="yes" if i % 2 == 0 else "no",
                    origin="machine",
                    source_subset="ma_corpus",
                    backend_votes=(vote("yes", 0.99),),
                )
            )
            qid += 1
    return records


class TestSampleForReview:
    def test_deterministic_for_fixed_seed(self):
        records = make_records(10)
        first = sample_for_review(records, 0.1, seed=42)
        second = sample_for_review(records, 0.1, seed=42)
        assert [r.question_id for r in first] == [r.question_id for r in second]
        assert len(first) == 24

    def test_rate_one_returns_everything(self):
        records = make_records(3)
        sample = sample_for_review(records, 1.0, seed=1)
        assert sorted(r.question_id for r in sample) == [r.question_id for r in records]

    def test_every_kind_represented(self):
        records = make_records(10)  # 240 records over 24 kinds
        sample = sample_for_review(records, 0.05, seed=7)
        kinds_in_sample = {r.kind_id for r in sample}
        assert len(kinds_in_sample) == 24

    def test_empty_records_error(self):
        with pytest.raises(DataError):
            sample_for_review([], 0.5, seed=0)

    def test_bad_rate_rejected(self):
        with pytest.raises(DataError):
            sample_for_review(make_records(1), 0.0, seed=0)


class TestReview:
    def test_accept_promotes_to_verified(self):
        records = make_records(1)
        target = records[0].question_id
        result = review(records, [Decision(target, "accept")], clock=lambda: 1234.5)
        updated = [r for r in result.records if r.question_id == target][0]
        assert updated.origin == "verified"
        assert updated.verified_at == 1234.5
        assert updated.answer == records[0].answer  # answers never change

    def test_reject_removes_and_logs(self):
        records = make_records(1)
        target = records[0].question_id
        result = review(records, [Decision(target, "reject")])
        assert target not in {r.question_id for r in result.records}
        assert result.audit[0].outcome == "rejected"

    def test_skip_changes_nothing(self):
        records = make_records(1)
        result = review(records, [Decision(records[3].question_id, "skip")])
        assert result.records == records

    def test_unknown_id_logged_dataset_unchanged(self):
        records = make_records(1)
        result = review(records, [Decision(99999, "accept")])
        assert result.records == records
        assert result.audit[0].outcome == "unknown"

    def test_audit_log_is_append_only(self, tmp_path):
        path = tmp_path / "audit.jsonl"
        records = make_records(1)
        review(records, [Decision(records[0].question_id, "accept")], audit_path=path)
        review(records, [Decision(records[1].question_id, "reject")], audit_path=path)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["outcome"] == "verified"
        assert lines[1]["outcome"] == "rejected"

    def test_decisions_file_roundtrip(self, tmp_path):
        path = tmp_path / "decisions.jsonl"
        path.write_text('{"record_id": 0, "action": "accept"}\n{"record_id": 1, "action": "skip"}\n')
        decisions = load_decisions(path)
        assert decisions == [Decision(0, "accept"), Decision(1, "skip")]
