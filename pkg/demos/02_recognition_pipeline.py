"""The recognition pipeline against a deterministic mock backend:
individual queries, one fused joint query, and the per-kind fallback.

Run: python demos/02_recognition_pipeline.py
"""

from contextd import taxonomy
from contextd.protocol.mock import GroundTruthStore, MockBackend
from contextd.queries import build_joint_query, recognize

# One synthetic frame with hand-picked truth bits.
bits = {k.id: False for k in taxonomy()}
for present in ("daytime", "sunny", "highway", "rural_area", "paved_road",
                "lane_markers_visible", "construction_zone", "outdoors"):
    bits[present] = True
truth = GroundTruthStore({"img:frame": bits})
backend = MockBackend(truth)

print("== individual mode: one backend call per context ==")
answers = recognize("img:frame", taxonomy(), backend, mode="individual")
detected = sorted(k.id for k, a in answers.items() if a.verdict.value == "yes")
print("contexts detected:", ", ".join(detected))

print("\n== joint mode: all 24 questions fused into one prompt ==")
joint_query = build_joint_query("img:frame", taxonomy())
print("prompt head:", joint_query.prompt_text[:120], "...")
answers = recognize("img:frame", taxonomy(), backend, mode="joint")
detected_joint = sorted(k.id for k, a in answers.items() if a.verdict.value == "yes")
print("same result:", detected_joint == detected)

print("\n== fallback: a joint reply that drops one item ==")
flaky = MockBackend(truth, joint_omit_kinds={"tunnel"})
no_fallback = recognize("img:frame", taxonomy(), flaky, mode="joint", fallback=False)
with_fallback = recognize("img:frame", taxonomy(), flaky, mode="joint", fallback=True)
tunnel = next(k for k in no_fallback if k.id == "tunnel")
print("without fallback:", no_fallback[tunnel].verdict.value)
print("with fallback:   ", with_fallback[tunnel].verdict.value,
      "(answered by an individual retry)")
