"""The edge loop on a simulated clock: cold start, steady-state refresh,
and a mid-drive scene change propagating into the published state.

Run: python demos/06_realtime_loop.py
"""

from contextd import taxonomy
from contextd.clock import SimulatedClock
from contextd.protocol.mock import GroundTruthStore, LatencyModel, MockBackend
from contextd.runner import (
    CollectorSink, Frame, Runner, SchedulerConfig, ScriptedFrameSource,
    worst_case_full_refresh,
)

residential = {k.id: False for k in taxonomy()}
for present in ("daytime", "sunny", "city", "paved_road", "outdoors"):
    residential[present] = True
downtown = dict(residential, urban_canyon=True, heavy_traffic=True)

truth = GroundTruthStore({"img:residential": residential, "img:downtown": downtown})

# Drive 20 simulated seconds through a residential area, then hit downtown.
switch_at = 10_000.0
frames = [Frame(ts_ms=float(t), image_ref="img:residential" if t < switch_at
                else "img:downtown")
          for t in range(0, 20_001, 100)]

config = SchedulerConfig()  # 10.5 ms budget, 252 ms cycle, fast 1 s / slow 5 s
clock = SimulatedClock()
backend = MockBackend(truth, latency=LatencyModel(per_question_ms=9.0), clock=clock)
sink = CollectorSink()
runner = Runner(config, backend, ScriptedFrameSource(frames, end_ms=20_000.0),
                sink, clock=clock)

print(f"worst-case full refresh: {worst_case_full_refresh(config, 24):.0f} ms "
      f"-> {1000 / worst_case_full_refresh(config, 24):.2f} Hz")

final = runner.run()

cold_done = next(ts for ts, _, snap in sink.publishes
                 if all(e.value != "unknown" for e in snap))
print(f"cold start: all 24 contexts known by t={cold_done:.0f} ms")

canyon_seen = next(ts for ts, changed, _ in sink.publishes
                   if ts >= switch_at
                   and any(e.kind_id == "urban_canyon" and e.value == "present"
                           for e in changed))
print(f"urban canyon entered at t={switch_at:.0f} ms, "
      f"published present at t={canyon_seen:.0f} ms "
      f"(+{canyon_seen - switch_at:.0f} ms)")

print(f"\n{runner.stats.cycles} cycles, {runner.stats.queries_issued} queries, "
      f"budget violations: {runner.stats.budget_violations}")
print("final state:", ", ".join(sorted(e.kind_id for e in final if e.value == "present")))
