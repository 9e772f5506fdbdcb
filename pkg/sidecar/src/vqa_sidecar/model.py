"""Model answerer: a pretrained visual-question-answering pipeline.

Loaded lazily so stub deployments never import the ML stack. Confidence is
the pipeline's score for its top answer when exposed; absent otherwise (the
orchestrator synthesizes per its own rule). Single questions only; fused
multi-question prompts are out of reach for this model class, so servers in
model mode advertise supports_joint=false.
"""

from __future__ import annotations

import io
from typing import Optional

DEFAULT_MODEL_ID = "dandelin/vilt-b32-finetuned-vqa"


class ModelLoadError(Exception):
    pass


class ModelAnswerer:
    supports_joint = False

    def __init__(self, model_id: str, device: str = "cpu"):
        self.model_id = model_id
        try:
            from transformers import pipeline

            self._pipe = pipeline(
                "visual-question-answering", model=model_id, device=device
            )
        except Exception as exc:  # load failures must refuse the handshake
            raise ModelLoadError(f"cannot load model {model_id!r}: {exc}") from exc

    def _open_image(self, image: dict):
        from PIL import Image

        if image.get("kind") == "inline":
            from .stub import _inline_bytes

            return Image.open(io.BytesIO(_inline_bytes(image))).convert("RGB")
        uri = image.get("uri", "")
        path = uri[len("file:") :] if uri.startswith("file:") else uri
        return Image.open(path).convert("RGB")

    def answer(self, request: dict) -> dict:
        pil_image = self._open_image(request["image"])
        answers = []
        for question in request["questions"]:
            predictions = self._pipe(image=pil_image, question=question["text"], top_k=1)
            if not predictions:
                continue
            top = predictions[0]
            item = {"qid": question["qid"], "answer_text": str(top.get("answer", ""))}
            score = top.get("score")
            if score is not None:
                item["confidence"] = max(0.0, min(1.0, float(score)))
            answers.append(item)
        return {
            "type": "answers",
            "id": request["id"],
            "answers": answers,
            "backend_latency_ms": 0.0,
        }
