from __future__ import annotations

import pytest

from contextd.clock import SimulatedClock
from contextd.errors import ConfigError, TransportError
from contextd.protocol.mock import GroundTruthStore, LatencyModel, MockBackend
from contextd.runner import (
    CollectorSink,
    ContextState,
    Frame,
    Runner,
    SchedulerConfig,
    ScriptedFrameSource,
    StateEntry,
    schedule_due,
    worst_case_full_refresh,
)
from contextd.queries import Verdict
from contextd.taxonomy import all_kind_ids, kind_by_id, taxonomy

from conftest import alternating_bits


def sim_setup(bits=None, per_question_ms=9.0, config=None, frames=None, end_ms=60_000.0):
    bits = bits if bits is not None else alternating_bits()
    truth = GroundTruthStore({"img:A": bits})
    clock = SimulatedClock()
    backend = MockBackend(truth, latency=LatencyModel(per_question_ms=per_question_ms), clock=clock)
    config = config or SchedulerConfig()
    frames = frames or [Frame(ts_ms=0.0, image_ref="img:A")]
    source = ScriptedFrameSource(frames, end_ms=end_ms)
    sink = CollectorSink()
    runner = Runner(config, backend, source, sink, clock=clock)
    return runner, sink, clock, truth


def assert_snapshot_invariants(snapshot, config, now):
    for entry in snapshot:
        if entry.value == "unknown":
            assert entry.confidence == 0.0
        kind = kind_by_id(entry.kind_id)
        if entry.updated_at is None:
            assert entry.stale
        else:
            expected_stale = (now - entry.updated_at) > config.interval_for(kind)
            assert entry.stale == expected_stale


class TestSchedulerConfig:
    def test_budget_law_enforced_at_construction(self):
        with pytest.raises(ConfigError):
            SchedulerConfig(per_query_budget_ms=10.5, cycle_period_ms=252.0,
                            max_queries_per_cycle=25)

    def test_default_config_is_valid(self):
        config = SchedulerConfig()
        assert config.max_queries_per_cycle * config.per_query_budget_ms <= config.cycle_period_ms

    def test_unknown_kind_rejected(self):
        with pytest.raises(Exception):
            SchedulerConfig(enabled_kinds=("warp_drive",))


class TestWorstCaseFullRefresh:
    def test_default_budget_over_all_kinds(self):
        assert worst_case_full_refresh(SchedulerConfig(), 24) == pytest.approx(252.0)

    def test_single_kind(self):
        assert worst_case_full_refresh(SchedulerConfig(), 1) == pytest.approx(10.5)

    def test_heavier_backend_budget(self):
        config = SchedulerConfig(per_query_budget_ms=39.0, cycle_period_ms=936.0)
        assert worst_case_full_refresh(config, 24) == pytest.approx(936.0)

    def test_joint_mode_is_one_call(self):
        config = SchedulerConfig(mode="joint")
        assert worst_case_full_refresh(config, 24) == pytest.approx(10.5)


class TestScheduleDue:
    def test_cold_start_covers_all_kinds_in_three_cycles(self):
        config = SchedulerConfig(max_queries_per_cycle=8, cycle_period_ms=252.0)
        state = ContextState(config.enabled_kinds)
        seen = []
        now = 0.0
        for _ in range(3):
            due = schedule_due(state, now, config)
            assert len(due) == 8
            for kind in due:
                state.apply(kind.id, Verdict.YES, 0.99, now)
                seen.append(kind.id)
            now += 252.0
        assert sorted(seen) == sorted(all_kind_ids())

    def test_nothing_due_when_everything_fresh(self):
        config = SchedulerConfig()
        state = ContextState(config.enabled_kinds)
        for kind in taxonomy():
            state.apply(kind.id, Verdict.NO, 0.9, now=1000.0)
        assert schedule_due(state, 1001.0, config) == []

    def test_oldest_deadline_wins_under_capacity_pressure(self):
        config = SchedulerConfig(max_queries_per_cycle=1, cycle_period_ms=252.0)
        state = ContextState(config.enabled_kinds)
        now = 10_000.0
        fast_kind = kind_by_id("tunnel")      # interval 1000
        slow_kind = kind_by_id("rainy")       # interval 5000
        for kind in taxonomy():
            state.apply(kind.id, Verdict.YES, 0.9, now)
        # fast updated at 8000 -> deadline 9000; slow updated at 4500 -> deadline 9500
        state.apply(fast_kind.id, Verdict.YES, 0.9, 8000.0)
        state.apply(slow_kind.id, Verdict.YES, 0.9, 4500.0)
        due = schedule_due(state, now, config)
        assert due == [fast_kind]
        # After the winner refreshes, the loser is scheduled next cycle.
        state.apply(fast_kind.id, Verdict.YES, 0.9, now)
        due_next = schedule_due(state, now + 252.0, config)
        assert due_next == [slow_kind]

    def test_unknown_kinds_always_due(self):
        config = SchedulerConfig()
        state = ContextState(config.enabled_kinds)
        due = schedule_due(state, 0.0, config)
        assert len(due) == 24


class TestRunnerLoop:
    def test_perfect_backend_replays_ground_truth(self):
        bits = alternating_bits()
        runner, sink, clock, _ = sim_setup(bits=bits, end_ms=2_600.0)
        final = runner.run()
        assert all((e.value == "present") == bits[e.kind_id] for e in final)
        for ts, changed, snapshot in sink.publishes:
            for entry in changed:
                if entry.value != "unknown":
                    assert (entry.value == "present") == bits[entry.kind_id]

    def test_cold_start_completes_within_worst_case_budget(self):
        runner, sink, clock, _ = sim_setup(per_question_ms=9.0, end_ms=1_000.0)
        runner.run(max_cycles=1)
        complete_at = None
        for ts, changed, snapshot in sink.publishes:
            if all(e.value != "unknown" for e in snapshot):
                complete_at = ts
                break
        assert complete_at is not None
        assert complete_at <= worst_case_full_refresh(runner.config, 24)

    def test_budget_law_holds_every_cycle(self):
        config = SchedulerConfig(max_queries_per_cycle=8, cycle_period_ms=252.0)
        runner, sink, clock, _ = sim_setup(config=config, end_ms=float("inf"))
        runner.run(max_cycles=200)
        assert runner.stats.budget_violations == 0
        assert runner.stats.max_issued_per_cycle <= 8

    def test_over_budget_query_cancelled_kind_stays_due(self):
        # 20 ms per query against a 10.5 ms budget: every call is cancelled.
        runner, sink, clock, _ = sim_setup(per_question_ms=20.0, end_ms=float("inf"))
        runner.run(max_cycles=3)
        assert runner.stats.timeouts > 0
        snapshot = runner.snapshot()
        assert all(e.value == "unknown" for e in snapshot)
        assert_snapshot_invariants(snapshot, runner.config, clock.now_ms())
        # still due next cycle
        due = schedule_due(runner.state, clock.now_ms(), runner.config)
        assert len(due) == 24

    def test_published_timestamps_are_monotone(self):
        runner, sink, clock, _ = sim_setup(end_ms=3_000.0)
        runner.run()
        timestamps = [ts for ts, _, _ in sink.publishes]
        assert timestamps == sorted(timestamps)

    def test_every_snapshot_respects_invariants(self):
        runner, sink, clock, _ = sim_setup(end_ms=5_000.0)
        runner.run()
        for ts, changed, snapshot in sink.publishes:
            assert_snapshot_invariants(snapshot, runner.config, ts)

    def test_truth_flip_propagates_within_refresh_bound(self):
        bits_a = alternating_bits()
        bits_b = dict(bits_a, urban_canyon=not bits_a["urban_canyon"])
        truth = GroundTruthStore({"img:A": bits_a, "img:B": bits_b})
        clock = SimulatedClock()
        backend = MockBackend(truth, latency=LatencyModel(per_question_ms=9.0), clock=clock)
        flip_at = 30_000.0
        frames = [Frame(ts_ms=t, image_ref="img:A" if t < flip_at else "img:B")
                  for t in range(0, 60_001, 100)]
        config = SchedulerConfig()
        sink = CollectorSink()
        runner = Runner(config, backend, ScriptedFrameSource(frames, end_ms=60_000.0),
                        sink, clock=clock)
        runner.run()
        want = "present" if bits_b["urban_canyon"] else "absent"
        flip_seen_at = None
        for ts, changed, snapshot in sink.publishes:
            if ts < flip_at:
                continue
            if any(e.kind_id == "urban_canyon" and e.value == want for e in changed):
                flip_seen_at = ts
                break
        bound = config.refresh_interval_ms["fast"] + config.cycle_period_ms
        assert flip_seen_at is not None
        assert flip_seen_at - flip_at <= bound

    def test_frame_source_end_means_clean_shutdown_with_final_snapshot(self):
        runner, sink, clock, _ = sim_setup(end_ms=600.0)
        final = runner.run()
        assert sink.publishes[-1][2] == final
        assert clock.now_ms() >= 600.0

    def test_backend_loss_degrades_to_stale_and_recovers(self):
        bits = alternating_bits()
        truth = GroundTruthStore({"img:A": bits})
        clock = SimulatedClock()

        class Outage:
            def __init__(self):
                self.inner = MockBackend(truth, clock=clock)
                self.down_between = (1_000.0, 9_000.0)

            def _dead(self):
                lo, hi = self.down_between
                return lo <= clock.now_ms() < hi

            def descriptor(self):
                if self._dead():
                    raise TransportError("backend gone")
                return self.inner.descriptor()

            def ask(self, request, timeout_ms=None):
                if self._dead():
                    raise TransportError("backend gone")
                return self.inner.ask(request, timeout_ms=timeout_ms)

        config = SchedulerConfig()
        sink = CollectorSink()
        frames = [Frame(ts_ms=0.0, image_ref="img:A")]
        runner = Runner(config, Outage(), ScriptedFrameSource(frames, end_ms=20_000.0),
                        sink, clock=clock)

        # Step until deep into the outage and look at the live state: values
        # keep their last known good reading but have gone stale.
        while clock.now_ms() < 8_000.0:
            runner.step()
        assert runner.stats.backend_outages >= 1
        mid = runner.state.snapshot(clock.now_ms(), config)
        assert all(e.value != "unknown" for e in mid)
        fast_entries = [e for e in mid if kind_by_id(e.kind_id).refresh_class == "fast"]
        assert fast_entries and all(e.stale for e in fast_entries)

        # After the backend comes back, every kind gets re-queried.
        runner.run()
        final = runner.snapshot()
        assert all(e.updated_at is not None and e.updated_at >= 9_000.0 for e in final)

    def test_adhoc_query_rides_next_cycle_without_schedule_slot(self):
        bits = alternating_bits()
        runner, sink, clock, _ = sim_setup(bits=bits, end_ms=1_000.0)
        handle = runner.ask_adhoc("Is this an urban canyon with tall buildings?")
        runner.run(max_cycles=2)
        assert handle.answered
        expected = Verdict.YES if bits["urban_canyon"] else Verdict.NO
        assert handle.result(0).verdict is expected
        # the schedule issued at most the configured cap regardless of the ad-hoc ask
        assert runner.stats.max_issued_per_cycle <= runner.config.max_queries_per_cycle


class TestFrameSources:
    def test_latest_returns_newest_frame_not_a_queue(self):
        source = ScriptedFrameSource(
            [Frame(0.0, "img:1"), Frame(100.0, "img:2"), Frame(200.0, "img:3")],
            end_ms=1_000.0,
        )
        assert source.latest(150.0).image_ref == "img:2"
        assert source.latest(500.0).image_ref == "img:3"
        assert source.latest(-1.0) is None

    def test_directory_source_picks_newest_file(self, tmp_path):
        import os
        from contextd.runner import DirectoryFrameSource

        old = tmp_path / "a.jpg"
        new = tmp_path / "b.jpg"
        old.write_bytes(b"old")
        new.write_bytes(b"new")
        os.utime(old, (1_000, 1_000))
        os.utime(new, (2_000, 2_000))
        source = DirectoryFrameSource(tmp_path)
        assert source.latest(0.0).image_ref.endswith("b.jpg")
        assert not source.ended(1e12)
