"""Scoring backends and timing them: per-kind metrics, confidence
profiles, and why fusing questions into one call saves time.

Run: python demos/05_evaluation_and_latency.py
"""

from contextd.clock import SimulatedClock
from contextd.evaluation import benchmark_latency, confidence_profile, evaluate
from contextd.protocol.mock import LatencyModel, MockBackend, NoiseModel
from contextd.synthetic import make_manifest
from contextd.taxonomy import all_kind_ids

manifest, truth = make_manifest("eval", {"kitti": 40, "web": 20}, seed=5)

print("== error rate sweep ==")
print(f"{'flip prob':>9} {'micro acc':>10} {'macro f1':>9} {'unparseable':>12}")
for flip in (0.0, 0.05, 0.15, 0.30):
    backend = MockBackend(truth, noise=NoiseModel(flip_prob=flip), seed=7)
    report = evaluate(manifest, backend)
    f1 = report.macro.f1
    print(f"{flip:>9.2f} {report.micro.accuracy:>10.3f} "
          f"{(f1 if f1 is not None else float('nan')):>9.3f} "
          f"{report.unparseable_total:>12}")

print("\n== confidence profile (mean confidence of yes verdicts) ==")
backend = MockBackend(truth, noise=NoiseModel(conf_correct=(0.97, 1.0)), seed=7)
profile = confidence_profile(evaluate(manifest, backend))
shown = {k: round(v, 3) for k, v in list(profile.items())[:6] if v is not None}
print(shown, "...")

print("\n== individual vs joint timing on a cost-modeled stub ==")
# Fixed per-call overhead plus a per-question marginal: one fused call pays
# the overhead once, twenty-four single calls pay it twenty-four times.
clock = SimulatedClock()
slow = MockBackend(truth, latency=LatencyModel(per_call_ms=648.3, per_question_ms=1117.6),
                   clock=clock)
refs = [manifest.images[0].image_ref]
individual = benchmark_latency(slow, refs, all_kind_ids(), mode="individual", clock=clock)
joint = benchmark_latency(slow, refs, all_kind_ids(), mode="joint", clock=clock)
print(f"individual: {individual.total_ms / 1000:.3f} s total "
      f"({individual.per_query_ms['mean'] / 1000:.3f} s per query, {individual.calls} calls)")
print(f"joint:      {joint.total_ms / 1000:.3f} s total "
      f"({joint.per_query_ms['mean'] / 1000:.3f} s per question, {joint.calls} call)")
print(f"ratio:      {joint.total_ms / individual.total_ms:.3f}")

print("\n== a lightweight backend at 39 ms/query ==")
clock2 = SimulatedClock()
fast = MockBackend(truth, latency=LatencyModel(per_question_ms=39.0), clock=clock2)
report = benchmark_latency(fast, refs, all_kind_ids(), mode="individual", clock=clock2)
print(f"total for all 24 contexts: {report.total_ms / 1000:.3f} s")
