from __future__ import annotations

import pytest

from contextd.errors import DataError, MissingTruthError
from contextd.protocol.messages import AskRequest, ImagePayload, Question, encode_message
from contextd.protocol.mock import GroundTruthStore, MockBackend, NoiseModel, mock_answer
from contextd.queries import Verdict
from contextd.taxonomy import taxonomy

from conftest import alternating_bits


def meta_for(image_ref: str, bits: dict) -> dict:
    return {"image_ref": image_ref, "contexts": bits}


class TestMockAnswer:
    def test_zero_noise_always_matches_truth(self):
        bits = alternating_bits()
        for kind in taxonomy():
            answer = mock_answer(meta_for("img:z", bits), kind, NoiseModel(flip_prob=0.0), seed=5)
            assert (answer.verdict is Verdict.YES) == bits[kind.id]
            assert 0.95 <= answer.confidence <= 1.0

    def test_full_noise_always_negates_truth(self):
        bits = alternating_bits()
        for kind in taxonomy():
            answer = mock_answer(meta_for("img:z", bits), kind, NoiseModel(flip_prob=1.0), seed=5)
            assert (answer.verdict is Verdict.YES) == (not bits[kind.id])
            assert 0.55 <= answer.confidence <= 0.95

    def test_empirical_flip_rate_tracks_configuration(self):
        # Monte Carlo over ~10k independent draws; expected rate 0.07.
        bits = alternating_bits()
        noise = NoiseModel(flip_prob=0.07)
        flips = 0
        draws = 0
        for i in range(420):
            meta = meta_for(f"img:{i}", bits)
            for kind in taxonomy():
                answer = mock_answer(meta, kind, noise, seed=123)
                flips += (answer.verdict is Verdict.YES) != bits[kind.id]
                draws += 1
        assert draws >= 10_000
        assert abs(flips / draws - 0.07) <= 0.01

    def test_missing_truth_bit_is_an_error(self):
        with pytest.raises(MissingTruthError):
            mock_answer(meta_for("img:z", {"daytime": True}), "tunnel", NoiseModel(), seed=0)

    def test_deterministic_and_call_order_independent(self):
        bits = alternating_bits()
        first = mock_answer(meta_for("img:z", bits), "rainy", NoiseModel(flip_prob=0.3), seed=9)
        mock_answer(meta_for("img:other", bits), "tunnel", NoiseModel(flip_prob=0.3), seed=9)
        again = mock_answer(meta_for("img:z", bits), "rainy", NoiseModel(flip_prob=0.3), seed=9)
        assert first == again

    def test_bad_flip_prob_rejected(self):
        with pytest.raises(DataError):
            mock_answer(meta_for("i", alternating_bits()), "rainy", NoiseModel(flip_prob=1.5), 0)


class TestMockBackend:
    def ask_all(self, backend):
        request = AskRequest(
            id="r",
            image=ImagePayload.from_locator("img:one"),
            mode="individual",
            questions=tuple(Question(qid=k.id, text=k.question_text) for k in taxonomy()),
        )
        return backend.ask(request)

    def test_identical_configuration_gives_identical_bytes(self, truth_one_image):
        a = MockBackend(truth_one_image, noise=NoiseModel(flip_prob=0.2), seed=7)
        b = MockBackend(truth_one_image, noise=NoiseModel(flip_prob=0.2), seed=7)
        assert encode_message(self.ask_all(a)) == encode_message(self.ask_all(b))

    def test_different_seed_changes_some_answers(self, truth_one_image):
        a = MockBackend(truth_one_image, noise=NoiseModel(flip_prob=0.5), seed=1)
        b = MockBackend(truth_one_image, noise=NoiseModel(flip_prob=0.5), seed=2)
        assert encode_message(self.ask_all(a)) != encode_message(self.ask_all(b))

    def test_unknown_image_goes_unanswered(self, truth_one_image):
        backend = MockBackend(truth_one_image)
        request = AskRequest(
            id="r",
            image=ImagePayload.from_locator("img:nowhere"),
            mode="individual",
            questions=(Question(qid="daytime", text="Is this during daytime?"),),
        )
        assert backend.ask(request).answers == ()

    def test_confidence_suppressed_when_not_supported(self, truth_one_image):
        backend = MockBackend(truth_one_image, supports_confidence=False)
        response = self.ask_all(backend)
        assert all(a.confidence is None for a in response.answers)

    def test_truth_store_roundtrip(self, tmp_path, truth_one_image):
        path = tmp_path / "truth.jsonl"
        truth_one_image.save(path)
        loaded = GroundTruthStore.load(path)
        assert loaded.bits_for("img:one") == truth_one_image.bits_for("img:one")

    def test_truth_store_rejects_unknown_kind(self):
        with pytest.raises(DataError):
            GroundTruthStore({"img:x": {"warp_drive": True}})
