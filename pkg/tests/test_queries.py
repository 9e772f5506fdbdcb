from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from contextd.errors import CapabilityError, DataError, TransportError
from contextd.protocol.mock import GroundTruthStore, MockBackend
from contextd.queries import (
    Answer,
    CONF_ASSUMED,
    CONF_BACKEND,
    Verdict,
    build_individual_queries,
    build_joint_query,
    parse_individual_answer,
    parse_joint_answer,
    recognize,
)
from contextd.taxonomy import taxonomy

from conftest import alternating_bits


class TestBuildQueries:
    def test_one_query_per_kind_order_preserved(self):
        queries = build_individual_queries("img:1", taxonomy())
        assert len(queries) == 24
        assert [q.kinds[0] for q in queries] == list(taxonomy())
        assert all(q.mode == "individual" for q in queries)

    def test_single_kind_prompt_is_the_template(self):
        (query,) = build_individual_queries("img:1", ["daytime"])
        assert query.prompt_text == "Is this during daytime?"

    def test_empty_kinds_rejected(self):
        with pytest.raises(DataError):
            build_individual_queries("img:1", [])
        with pytest.raises(DataError):
            build_joint_query("img:1", [])

    def test_duplicate_kinds_rejected(self):
        with pytest.raises(DataError):
            build_individual_queries("img:1", ["daytime", "daytime"])

    def test_joint_prompt_enumerates_numbered_questions(self):
        query = build_joint_query("img:1", ["daytime", "rainy"])
        assert "1. Is this during daytime? 2. Is this during rainy weather?" in query.prompt_text

    def test_joint_prompt_covers_all_24(self):
        query = build_joint_query("img:1", taxonomy())
        for i in range(1, 25):
            assert f"{i}. " in query.prompt_text
        assert query.mode == "joint"


class TestParseIndividual:
    def test_bare_yes(self):
        answer = parse_individual_answer("Yes")
        assert answer.verdict is Verdict.YES
        assert answer.confidence == 1.0
        assert answer.confidence_source == CONF_ASSUMED

    def test_punctuated_no(self):
        assert parse_individual_answer("no.").verdict is Verdict.NO

    def test_hedging_text_is_unparseable_with_zero_confidence(self):
        answer = parse_individual_answer("It is hard to tell")
        assert answer.verdict is Verdict.UNPARSEABLE
        assert answer.confidence == 0.0

    def test_backend_confidence_passes_through(self):
        answer = parse_individual_answer("yes", confidence=0.97)
        assert answer.confidence == 0.97
        assert answer.confidence_source == CONF_BACKEND

    def test_cue_scan_resolves_non_leading_tokens(self):
        assert parse_individual_answer("Absolutely.").verdict is Verdict.YES
        assert parse_individual_answer("I would say nope").verdict is Verdict.NO

    def test_mixed_cues_stay_unparseable(self):
        assert parse_individual_answer("yes and no").verdict is Verdict.YES  # leading token wins
        assert parse_individual_answer("maybe true, maybe false").verdict is Verdict.UNPARSEABLE

    def test_determinism(self):
        texts = ["Yes", "no.", "hard to say", "1. yes", "Absolutely."]
        for text in texts:
            assert parse_individual_answer(text) == parse_individual_answer(text)


class TestParseJoint:
    def test_two_item_reply(self):
        answers = parse_joint_answer("1. yes 2. no", ["daytime", "rainy"])
        by_id = {k.id: a.verdict for k, a in answers.items()}
        assert by_id == {"daytime": Verdict.YES, "rainy": Verdict.NO}

    def test_empty_text_leaves_everything_unparseable(self):
        answers = parse_joint_answer("", ["daytime", "rainy"])
        assert all(a.verdict is Verdict.UNPARSEABLE for a in answers.values())

    def test_missing_index_only_hits_its_kind(self):
        answers = parse_joint_answer("2. no", ["daytime", "rainy"])
        by_id = {k.id: a.verdict for k, a in answers.items()}
        assert by_id == {"daytime": Verdict.UNPARSEABLE, "rainy": Verdict.NO}

    def test_first_duplicate_index_wins(self):
        answers = parse_joint_answer("1. yes 1. no", ["daytime"])
        assert list(answers.values())[0].verdict is Verdict.YES

    def test_out_of_range_indices_ignored(self):
        answers = parse_joint_answer("1. yes 7. no", ["daytime", "rainy"])
        by_id = {k.id: a.verdict for k, a in answers.items()}
        assert by_id == {"daytime": Verdict.YES, "rainy": Verdict.UNPARSEABLE}

    def test_newline_and_paren_formats(self):
        answers = parse_joint_answer("1) Yes\n2) No", ["daytime", "rainy"])
        by_id = {k.id: a.verdict for k, a in answers.items()}
        assert by_id == {"daytime": Verdict.YES, "rainy": Verdict.NO}

    def test_malformed_item_degrades_to_unparseable(self):
        answers = parse_joint_answer("1. perhaps 2. no", ["daytime", "rainy"])
        by_id = {k.id: a.verdict for k, a in answers.items()}
        assert by_id == {"daytime": Verdict.UNPARSEABLE, "rainy": Verdict.NO}

    def test_synthetic_all_yes_roundtrip(self):
        kinds = taxonomy()
        reply = " ".join(f"{i}. yes" for i in range(1, 25))
        answers = parse_joint_answer(reply, kinds)
        assert all(a.verdict is Verdict.YES for a in answers.values())

    @settings(max_examples=200)
    @given(st.text(max_size=300))
    def test_total_over_arbitrary_text(self, text):
        kinds = taxonomy()[:5]
        answers = parse_joint_answer(text, kinds)
        assert len(answers) == 5
        assert set(answers) == set(kinds)


class TestRecognize:
    def test_individual_matches_ground_truth(self, perfect_backend):
        bits = alternating_bits()
        answers = recognize("img:one", taxonomy(), perfect_backend)
        assert len(answers) == 24
        for kind, answer in answers.items():
            assert (answer.verdict is Verdict.YES) == bits[kind.id]

    def test_joint_matches_individual_for_single_kind(self, perfect_backend):
        individual = recognize("img:one", ["tunnel"], perfect_backend, mode="individual")
        joint = recognize("img:one", ["tunnel"], perfect_backend, mode="joint")
        (kind,) = individual
        assert individual[kind].verdict == joint[kind].verdict

    def test_joint_fallback_retries_missing_item(self, truth_one_image):
        backend = MockBackend(truth_one_image, joint_omit_kinds={"twilight"})
        kinds = ["daytime", "nighttime", "twilight"]
        no_fallback = recognize("img:one", kinds, backend, mode="joint", fallback=False)
        twilight = [k for k in no_fallback if k.id == "twilight"][0]
        assert no_fallback[twilight].verdict is Verdict.UNPARSEABLE

        with_fallback = recognize("img:one", kinds, backend, mode="joint", fallback=True)
        expected = Verdict.YES if alternating_bits()["twilight"] else Verdict.NO
        assert with_fallback[twilight].verdict is expected
        # Items the joint reply already answered are untouched by fallback.
        for kind in with_fallback:
            if kind.id != "twilight":
                assert with_fallback[kind].verdict == no_fallback[kind].verdict

    def test_joint_without_capability_is_an_error(self, truth_one_image):
        backend = MockBackend(truth_one_image, supports_joint=False)
        with pytest.raises(CapabilityError):
            recognize("img:one", ["daytime"], backend, mode="joint")

    def test_joint_question_cap_enforced(self, truth_one_image):
        backend = MockBackend(truth_one_image, max_joint_questions=2)
        with pytest.raises(CapabilityError):
            recognize("img:one", ["daytime", "rainy", "tunnel"], backend, mode="joint")

    def test_transport_failure_carries_failed_ids_and_partials(self, truth_one_image):
        class DyingBackend:
            def __init__(self, inner, survive_calls):
                self.inner = inner
                self.remaining = survive_calls

            def descriptor(self):
                return self.inner.descriptor()

            def ask(self, request, timeout_ms=None):
                if self.remaining <= 0:
                    raise TransportError("connection reset")
                self.remaining -= 1
                return self.inner.ask(request, timeout_ms=timeout_ms)

        backend = DyingBackend(MockBackend(truth_one_image), survive_calls=2)
        with pytest.raises(TransportError) as exc_info:
            recognize("img:one", ["daytime", "rainy", "tunnel", "bridge"], backend)
        err = exc_info.value
        assert err.failed_query_ids == ["tunnel", "bridge"]
        assert len(err.partial) == 2
