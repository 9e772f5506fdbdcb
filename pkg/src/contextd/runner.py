"""The edge loop: frames in, a live 24-entry context state out.

Each cycle takes the newest frame (older ones are dropped, never queued),
asks the backend about the kinds whose refresh deadline has passed, folds
the answers into the state, and publishes every change to the sink as
newline-delimited records. Scheduling is earliest-deadline-first with a
per-cycle cap, which keeps every kind inside its refresh interval plus one
cycle whenever the backend keeps up, and starves nothing when it cannot.

The loop runs on an injected clock, so tests drive it on simulated time.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .clock import MonotonicClock
from .errors import (
    BackendTimeoutError,
    ConfigError,
    ContextdError,
    DataError,
    TransportError,
)
from .queries import (
    MODE_INDIVIDUAL,
    MODE_JOINT,
    Verdict,
    build_individual_queries,
    build_joint_query,
    parse_individual_answer,
    parse_joint_answer,
    _ask_one,
)
from .taxonomy import all_kind_ids, kind_index, resolve_kinds

VALUE_PRESENT = "present"
VALUE_ABSENT = "absent"
VALUE_UNKNOWN = "unknown"

DEFAULT_PER_QUERY_BUDGET_MS = 10.5
DEFAULT_REFRESH_MS = {"fast": 1000.0, "slow": 5000.0}


@dataclass(frozen=True)
class StateEntry:
    """One kind's slot in the published context state."""

    kind_id: str
    value: str
    confidence: float
    updated_at: Optional[float]
    stale: bool

    def __post_init__(self):
        if self.value not in (VALUE_PRESENT, VALUE_ABSENT, VALUE_UNKNOWN):
            raise DataError(f"unknown state value {self.value!r}")
        if self.value == VALUE_UNKNOWN and self.confidence != 0.0:
            raise DataError("unknown entries must carry confidence 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    def to_record(self, timestamp_ms: float) -> dict:
        return {
            "timestamp_ms": timestamp_ms,
            "kind": self.kind_id,
            "value": self.value,
            "confidence": self.confidence,
            "stale": self.stale,
        }


@dataclass(frozen=True)
class SchedulerConfig:
    per_query_budget_ms: float = DEFAULT_PER_QUERY_BUDGET_MS
    cycle_period_ms: float = 252.0
    refresh_interval_ms: dict = field(default_factory=lambda: dict(DEFAULT_REFRESH_MS))
    max_queries_per_cycle: int = 24
    mode: str = MODE_INDIVIDUAL
    enabled_kinds: tuple = ()

    def __post_init__(self):
        if not self.enabled_kinds:
            object.__setattr__(self, "enabled_kinds", all_kind_ids())
        else:
            object.__setattr__(
                self, "enabled_kinds", tuple(k.id for k in resolve_kinds(self.enabled_kinds))
            )
        if self.per_query_budget_ms <= 0 or self.cycle_period_ms <= 0:
            raise ConfigError("budget and cycle period must be positive")
        if self.max_queries_per_cycle < 1:
            raise ConfigError("max_queries_per_cycle must be at least 1")
        if self.mode not in (MODE_INDIVIDUAL, MODE_JOINT):
            raise ConfigError(f"unknown runner mode {self.mode!r}")
        for cls in ("fast", "slow"):
            if self.refresh_interval_ms.get(cls, 0) <= 0:
                raise ConfigError(f"refresh interval for {cls!r} must be positive")
        # Budget law: a full cycle's worth of queries must fit the period.
        if self.max_queries_per_cycle * self.per_query_budget_ms > self.cycle_period_ms + 1e-9:
            raise ConfigError(
                f"{self.max_queries_per_cycle} queries x {self.per_query_budget_ms} ms "
                f"exceeds the {self.cycle_period_ms} ms cycle period"
            )

    def interval_for(self, kind) -> float:
        return self.refresh_interval_ms[kind.refresh_class]


class ContextState:
    """Mutable state owned by the runner; snapshots are immutable copies."""

    def __init__(self, kind_ids):
        self._kinds = resolve_kinds(kind_ids)
        self._entries = {
            k.id: {"value": VALUE_UNKNOWN, "confidence": 0.0, "updated_at": None}
            for k in self._kinds
        }

    def entry(self, kind_id: str) -> dict:
        return self._entries[kind_id]

    def apply(self, kind_id: str, verdict: Verdict, confidence: float, now: float) -> bool:
        """Fold one definitive answer; unparseable answers change nothing so
        the last known good value survives and the kind simply stays due.
        Returns whether the entry changed."""
        if verdict is Verdict.UNPARSEABLE:
            return False
        e = self._entries[kind_id]
        value = VALUE_PRESENT if verdict is Verdict.YES else VALUE_ABSENT
        changed = e["value"] != value or e["confidence"] != confidence
        e["value"] = value
        e["confidence"] = confidence
        e["updated_at"] = now
        return changed

    def entry_snapshot(self, kind, now: float, config: SchedulerConfig) -> StateEntry:
        e = self._entries[kind.id]
        if e["updated_at"] is None:
            stale = True
        else:
            stale = (now - e["updated_at"]) > config.interval_for(kind)
        return StateEntry(
            kind_id=kind.id,
            value=e["value"],
            confidence=e["confidence"],
            updated_at=e["updated_at"],
            stale=stale,
        )

    def snapshot(self, now: float, config: SchedulerConfig) -> tuple:
        return tuple(self.entry_snapshot(k, now, config) for k in self._kinds)


def schedule_due(state: ContextState, now: float, config: SchedulerConfig) -> list:
    """Kinds whose refresh deadline has passed (or that are still unknown),
    earliest deadline first, truncated to the per-cycle cap.

    Pure in (state, now, config). Kinds cut by the cap keep their old
    deadlines, so they outrank freshly refreshed kinds next cycle; no kind
    starves.
    """
    due = []
    for kind in resolve_kinds(config.enabled_kinds):
        e = state.entry(kind.id)
        if e["value"] == VALUE_UNKNOWN or e["updated_at"] is None:
            deadline = float("-inf")
        else:
            deadline = e["updated_at"] + config.interval_for(kind)
            if deadline > now:
                continue
        due.append((deadline, kind_index(kind), kind))
    due.sort(key=lambda item: (item[0], item[1]))
    return [kind for _, _, kind in due[: config.max_queries_per_cycle]]


def worst_case_full_refresh(config: SchedulerConfig, n_kinds: int) -> float:
    """Budgeted time to refresh every kind once: n queries individually,
    or a single fused call in joint mode."""
    if n_kinds < 1:
        raise DataError("n_kinds must be at least 1")
    if config.mode == MODE_JOINT:
        return config.per_query_budget_ms
    return n_kinds * config.per_query_budget_ms


# ---------------------------------------------------------------------------
# Frame sources


@dataclass(frozen=True)
class Frame:
    ts_ms: float
    image_ref: str


class ScriptedFrameSource:
    """A fixed timestamped trace; the test-time frame source."""

    def __init__(self, frames, end_ms: Optional[float] = None):
        self.frames = sorted(frames, key=lambda f: f.ts_ms)
        self.end_ms = end_ms if end_ms is not None else (
            self.frames[-1].ts_ms if self.frames else 0.0
        )

    def latest(self, now: float) -> Optional[Frame]:
        newest = None
        for frame in self.frames:
            if frame.ts_ms <= now:
                newest = frame
            else:
                break
        return newest

    def ended(self, now: float) -> bool:
        return now > self.end_ms


class DirectoryFrameSource:
    """Newest file in a directory, by modification time; never ends."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DataError(f"frame directory {directory!r} does not exist")

    def latest(self, now: float) -> Optional[Frame]:
        files = [p for p in self.directory.iterdir() if p.is_file()]
        if not files:
            return None
        newest = max(files, key=lambda p: p.stat().st_mtime)
        return Frame(ts_ms=newest.stat().st_mtime * 1000.0, image_ref=str(newest))

    def ended(self, now: float) -> bool:
        return False


# ---------------------------------------------------------------------------
# Sinks


class CollectorSink:
    """In-memory sink for tests: every publish, with its full snapshot."""

    def __init__(self):
        self.publishes = []

    def publish(self, timestamp_ms: float, changed, snapshot) -> None:
        self.publishes.append((timestamp_ms, tuple(changed), tuple(snapshot)))

    def close(self) -> None:
        pass


class FileSink:
    """Newline-delimited JSON records, one per changed kind."""

    def __init__(self, path):
        self._fh = Path(path).open("a", encoding="utf-8")

    def publish(self, timestamp_ms: float, changed, snapshot) -> None:
        for entry in changed:
            self._fh.write(json.dumps(entry.to_record(timestamp_ms), sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class SocketSink:
    """The same newline-delimited records over a TCP connection."""

    def __init__(self, endpoint: str):
        host, _, port = endpoint.rpartition(":")
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=5.0)
        except (OSError, ValueError) as exc:
            raise TransportError(f"cannot reach sink at {endpoint!r}: {exc}") from exc

    def publish(self, timestamp_ms: float, changed, snapshot) -> None:
        payload = "".join(
            json.dumps(e.to_record(timestamp_ms), sort_keys=True) + "\n" for e in changed
        )
        self._sock.sendall(payload.encode("utf-8"))

    def close(self) -> None:
        self._sock.close()


def open_sink(target: str):
    if target.startswith("tcp:"):
        return SocketSink(target[len("tcp:") :])
    return FileSink(target)


# ---------------------------------------------------------------------------
# The loop


class AdhocQuery:
    """A one-off free-text question answered out-of-band at the next cycle."""

    def __init__(self, question_text: str):
        self.question_text = question_text
        self._event = threading.Event()
        self._answer = None

    def _resolve(self, answer) -> None:
        self._answer = answer
        self._event.set()

    @property
    def answered(self) -> bool:
        return self._event.is_set()

    def result(self, timeout_s: Optional[float] = None):
        self._event.wait(timeout_s)
        return self._answer


@dataclass
class RunnerStats:
    cycles: int = 0
    queries_issued: int = 0
    max_issued_per_cycle: int = 0
    timeouts: int = 0
    budget_violations: int = 0
    backend_outages: int = 0


class Runner:
    """Owns the context state; one logical writer, snapshot reads anytime."""

    def __init__(self, config: SchedulerConfig, backend, frame_source, sink, clock=None):
        self.config = config
        self.backend = backend
        self.frame_source = frame_source
        self.sink = sink
        self.clock = clock or MonotonicClock()
        self.state = ContextState(config.enabled_kinds)
        self.stats = RunnerStats()
        self._stop = threading.Event()
        self._adhoc = []
        self._adhoc_lock = threading.Lock()
        self._backend_down = False
        self._backoff_ms = 100.0
        self._snapshot_lock = threading.Lock()
        self._last_snapshot = self.state.snapshot(self.clock.now_ms(), config)

    # -- read side -----------------------------------------------------

    def snapshot(self) -> tuple:
        """Latest published snapshot; never blocks the loop."""
        with self._snapshot_lock:
            return self._last_snapshot

    def ask_adhoc(self, question_text: str) -> AdhocQuery:
        """Queue a one-off question; it rides the next cycle's frame without
        consuming a schedule slot."""
        query = AdhocQuery(question_text)
        with self._adhoc_lock:
            self._adhoc.append(query)
        return query

    def stop(self) -> None:
        self._stop.set()

    # -- loop ----------------------------------------------------------

    def run(self, max_cycles: Optional[int] = None) -> tuple:
        """Run until the frame source ends, ``stop()``, or ``max_cycles``.

        Returns the final snapshot."""
        cycles = 0
        while not self._stop.is_set():
            if max_cycles is not None and cycles >= max_cycles:
                break
            ended = self.step()
            cycles += 1
            if ended:
                break
        final = self.state.snapshot(self.clock.now_ms(), self.config)
        self._publish(self.clock.now_ms(), list(final), final)
        return final

    def step(self) -> bool:
        """One scheduler cycle. Returns True when the frame source is done."""
        cycle_start = self.clock.now_ms()
        if self.frame_source.ended(cycle_start):
            return True
        self.stats.cycles += 1

        frame = self.frame_source.latest(cycle_start)
        if frame is None:
            self._sleep_until(cycle_start + self.config.cycle_period_ms)
            return False

        if self._backend_down:
            self._try_recover(cycle_start)

        if not self._backend_down:
            due = schedule_due(self.state, cycle_start, self.config)
            issued = len(due)
            if issued * self.config.per_query_budget_ms > self.config.cycle_period_ms + 1e-9:
                self.stats.budget_violations += 1
            self.stats.queries_issued += issued
            self.stats.max_issued_per_cycle = max(self.stats.max_issued_per_cycle, issued)
            if due:
                if self.config.mode == MODE_JOINT:
                    self._run_joint(frame, due)
                else:
                    self._run_individual(frame, due)
            self._run_adhoc(frame)

        self._sleep_until(cycle_start + self.config.cycle_period_ms)
        return False

    def _sleep_until(self, target_ms: float) -> None:
        now = self.clock.now_ms()
        if target_ms > now:
            self.clock.sleep_ms(target_ms - now)

    def _publish(self, now: float, changed, snapshot) -> None:
        with self._snapshot_lock:
            self._last_snapshot = snapshot
        self.sink.publish(now, changed, snapshot)

    def _fold(self, kind, answer) -> None:
        now = self.clock.now_ms()
        changed = self.state.apply(kind.id, answer.verdict, answer.confidence, now)
        if changed:
            snapshot = self.state.snapshot(now, self.config)
            self._publish(now, [self.state.entry_snapshot(kind, now, self.config)], snapshot)

    def _on_transport_error(self) -> None:
        self._backend_down = True
        self.stats.backend_outages += 1

    def _try_recover(self, now: float) -> None:
        try:
            self.backend.descriptor()
        except ContextdError:
            self.clock.sleep_ms(self._backoff_ms)
            self._backoff_ms = min(self._backoff_ms * 2, 5000.0)
            return
        self._backend_down = False
        self._backoff_ms = 100.0

    def _run_individual(self, frame: Frame, due) -> None:
        budget = self.config.per_query_budget_ms
        for query in build_individual_queries(frame.image_ref, due):
            try:
                item, latency = _ask_one(
                    self.backend, frame.image_ref, None, query, timeout_ms=budget
                )
            except BackendTimeoutError:
                # Over-budget call: cancelled; the kind stays due.
                self.stats.timeouts += 1
                continue
            except TransportError:
                self._on_transport_error()
                return
            if item is not None:
                answer = parse_individual_answer(
                    item.answer_text, confidence=item.confidence, latency_ms=latency
                )
                self._fold(query.kinds[0], answer)

    def _run_joint(self, frame: Frame, due) -> None:
        budget = self.config.per_query_budget_ms
        query = build_joint_query(frame.image_ref, due)
        try:
            item, latency = _ask_one(
                self.backend, frame.image_ref, None, query, timeout_ms=budget
            )
        except BackendTimeoutError:
            self.stats.timeouts += 1
            return
        except TransportError:
            self._on_transport_error()
            return
        raw = item.answer_text if item is not None else ""
        conf = item.confidence if item is not None else None
        for kind, answer in parse_joint_answer(raw, due, confidence=conf, latency_ms=latency).items():
            self._fold(kind, answer)

    def _run_adhoc(self, frame: Frame) -> None:
        with self._adhoc_lock:
            pending, self._adhoc = self._adhoc, []
        for adhoc in pending:
            try:
                from .protocol.messages import AskRequest, ImagePayload, Question

                request = AskRequest(
                    id=f"adhoc-{id(adhoc)}",
                    image=ImagePayload.from_locator(frame.image_ref),
                    mode=MODE_INDIVIDUAL,
                    questions=(Question(qid="adhoc", text=adhoc.question_text),),
                )
                response = self.backend.ask(request, timeout_ms=None)
                item = next((a for a in response.answers if a.qid == "adhoc"), None)
                answer = parse_individual_answer(
                    item.answer_text if item else "",
                    confidence=item.confidence if item else None,
                    latency_ms=response.backend_latency_ms,
                )
            except ContextdError:
                answer = parse_individual_answer("")
            adhoc._resolve(answer)
