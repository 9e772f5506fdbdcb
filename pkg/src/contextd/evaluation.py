"""Scoring, confidence profiling, and latency benchmarking.

Predictions are scored against manifest labels per context kind, per source
subset, and in aggregate: micro pools all confusion counts, macro averages
the per-kind metrics. Unparseable verdicts are counted on their own ledger
and also scored as errors, so the pessimistic headline and the parse-failure
rate stay distinguishable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clock import MonotonicClock
from .errors import DataError, TransportError
from .queries import (
    MODE_INDIVIDUAL,
    MODE_JOINT,
    Verdict,
    build_individual_queries,
    build_joint_query,
    recognize,
)
from .taxonomy import kind_index, resolve_kinds, taxonomy


@dataclass
class ConfusionCounts:
    """Binary confusion counts; the positive class is a "yes" label."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DataError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    def observe(self, truth_yes: bool, predicted_yes: bool) -> None:
        if truth_yes:
            if predicted_yes:
                self.tp += 1
            else:
                self.fn += 1
        else:
            if predicted_yes:
                self.fp += 1
            else:
                self.tn += 1


@dataclass(frozen=True)
class MetricSet:
    """Accuracy/precision/recall/F1; a metric with no defined denominator is None."""

    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def f1_from_pr(precision: float, recall: float) -> Optional[float]:
    """Harmonic mean of precision and recall; None when both are zero."""
    if precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def metrics(c: ConfusionCounts) -> MetricSet:
    """Derive the four standard metrics from confusion counts."""
    if c.total == 0:
        raise DataError("metrics need at least one observation")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None
    f1 = f1_from_pr(precision, recall) if precision is not None and recall is not None else None
    return MetricSet(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


@dataclass
class KindEval:
    counts: ConfusionCounts
    metrics: Optional[MetricSet]
    mean_confidence_yes: Optional[float]
    mean_confidence_no: Optional[float]
    unparseable: int


@dataclass
class EvalReport:
    per_kind: dict            # kind_id -> KindEval
    per_subset: dict          # subset -> {"counts", "metrics"}
    per_cell: dict            # (kind_id, subset) -> ConfusionCounts
    micro_counts: ConfusionCounts
    micro: MetricSet
    macro: MetricSet
    unparseable_total: int
    pair_count: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def ms(m):
            return None if m is None else {
                "accuracy": m.accuracy,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
            }

        def cc(c):
            return {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}

        return {
            "per_kind": {
                kid: {
                    "counts": cc(ke.counts),
                    "metrics": ms(ke.metrics),
                    "mean_confidence_yes": ke.mean_confidence_yes,
                    "mean_confidence_no": ke.mean_confidence_no,
                    "unparseable": ke.unparseable,
                }
                for kid, ke in self.per_kind.items()
            },
            "per_subset": {
                subset: {"counts": cc(v["counts"]), "metrics": ms(v["metrics"])}
                for subset, v in self.per_subset.items()
            },
            "micro": {"counts": cc(self.micro_counts), "metrics": ms(self.micro)},
            "macro": ms(self.macro),
            "unparseable_total": self.unparseable_total,
            "pair_count": self.pair_count,
            "failures": self.failures,
        }

    def to_table(self) -> str:
        """Flat table, one row per (kind, subset) cell plus aggregates."""
        def fmt(x):
            return "undefined" if x is None else f"{x:.4f}"

        rows = ["kind\tsubset\ttp\tfp\ttn\tfn\taccuracy\tprecision\trecall\tf1"]
        for (kid, subset), c in sorted(
            self.per_cell.items(), key=lambda kv: (kind_index(kv[0][0]), kv[0][1])
        ):
            m = metrics(c) if c.total else None
            rows.append(
                f"{kid}\t{subset}\t{c.tp}\t{c.fp}\t{c.tn}\t{c.fn}\t"
                + (
                    f"{fmt(m.accuracy)}\t{fmt(m.precision)}\t{fmt(m.recall)}\t{fmt(m.f1)}"
                    if m
                    else "undefined\tundefined\tundefined\tundefined"
                )
            )
        m = self.micro
        rows.append(
            f"overall\tmicro\t{self.micro_counts.tp}\t{self.micro_counts.fp}\t"
            f"{self.micro_counts.tn}\t{self.micro_counts.fn}\t"
            f"{fmt(m.accuracy)}\t{fmt(m.precision)}\t{fmt(m.recall)}\t{fmt(m.f1)}"
        )
        m = self.macro
        rows.append(
            f"overall\tmacro\t-\t-\t-\t-\t{fmt(m.accuracy)}\t{fmt(m.precision)}\t"
            f"{fmt(m.recall)}\t{fmt(m.f1)}"
        )
        return "\n".join(rows)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _macro(metric_sets) -> MetricSet:
    """Unweighted mean over kinds, skipping undefined entries per metric."""
    def mean_of(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    accs = [m.accuracy for m in metric_sets]
    return MetricSet(
        accuracy=float(np.mean(accs)) if accs else 0.0,
        precision=mean_of(m.precision for m in metric_sets),
        recall=mean_of(m.recall for m in metric_sets),
        f1=mean_of(m.f1 for m in metric_sets),
    )


def evaluate(
    manifest,
    backend,
    mode: str = MODE_INDIVIDUAL,
    fallback: bool = False,
) -> EvalReport:
    """Score a backend against every labeled pair of a manifest.

    One prediction per labeled (image, kind) pair via the recognition
    pipeline. Unparseable predictions are scored as wrong (a pessimistic
    miss or false alarm depending on the label) and tallied separately.
    A backend failure on an image is recorded in ``failures`` and scoring
    continues, yielding a partial report.
    """
    cells = {}
    conf_yes = {}
    conf_no = {}
    unparseable = {k.id: 0 for k in taxonomy()}
    failures = []
    pair_count = 0

    subset_by_image = {im.image_id: im.source_subset for im in manifest.images}
    ref_by_image = {im.image_id: im.image_ref for im in manifest.images}

    by_image = {}
    for rec in manifest.records:
        by_image.setdefault(rec.image_id, []).append(rec)

    for image_id in sorted(by_image):
        records = sorted(by_image[image_id], key=lambda r: kind_index(r.kind_id))
        kinds = [r.kind_id for r in records]
        try:
            answers = recognize(ref_by_image[image_id], kinds, backend, mode=mode, fallback=fallback)
        except TransportError as exc:
            failures.append({"image_id": image_id, "error": str(exc)})
            continue
        answers_by_id = {k.id: a for k, a in answers.items()}
        subset = subset_by_image[image_id]
        for rec in records:
            a = answers_by_id[rec.kind_id]
            pair_count += 1
            cell = cells.setdefault((rec.kind_id, subset), ConfusionCounts())
            truth_yes = rec.answer == "yes"
            if a.verdict is Verdict.UNPARSEABLE:
                unparseable[rec.kind_id] += 1
                cell.observe(truth_yes, predicted_yes=not truth_yes)
            else:
                predicted_yes = a.verdict is Verdict.YES
                cell.observe(truth_yes, predicted_yes)
                bucket = conf_yes if predicted_yes else conf_no
                bucket.setdefault(rec.kind_id, []).append(a.confidence)

    per_kind = {}
    kind_metric_sets = []
    for k in taxonomy():
        counts = ConfusionCounts()
        for (kid, subset), c in cells.items():
            if kid == k.id:
                counts = counts.add(c)
        m = metrics(counts) if counts.total else None
        if m is not None:
            kind_metric_sets.append(m)
        per_kind[k.id] = KindEval(
            counts=counts,
            metrics=m,
            mean_confidence_yes=(
                float(np.mean(conf_yes[k.id])) if k.id in conf_yes else None
            ),
            mean_confidence_no=(
                float(np.mean(conf_no[k.id])) if k.id in conf_no else None
            ),
            unparseable=unparseable[k.id],
        )

    per_subset = {}
    for (kid, subset), c in cells.items():
        bucket = per_subset.setdefault(subset, ConfusionCounts())
        per_subset[subset] = bucket.add(c)
    per_subset = {
        subset: {"counts": c, "metrics": metrics(c) if c.total else None}
        for subset, c in sorted(per_subset.items())
    }

    micro_counts = ConfusionCounts()
    for c in cells.values():
        micro_counts = micro_counts.add(c)
    micro = metrics(micro_counts) if micro_counts.total else MetricSet(0.0, None, None, None)

    return EvalReport(
        per_kind=per_kind,
        per_subset=per_subset,
        per_cell=cells,
        micro_counts=micro_counts,
        micro=micro,
        macro=_macro(kind_metric_sets),
        unparseable_total=sum(unparseable.values()),
        pair_count=pair_count,
        failures=failures,
    )


def confidence_profile(report: EvalReport) -> dict:
    """Per-kind mean confidence among yes-verdicts; None where there were none."""
    return {kid: ke.mean_confidence_yes for kid, ke in report.per_kind.items()}


# ---------------------------------------------------------------------------
# Latency benchmarking


@dataclass(frozen=True)
class LatencyReport:
    mode: str
    per_query_ms: dict        # {"mean", "p50", "p95"}
    total_ms: float           # full pass over all kinds for one image (mean)
    calls: int
    partial: bool = False
    failures: list = ()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_query_ms": self.per_query_ms,
            "total_ms": self.total_ms,
            "calls": self.calls,
            "partial": self.partial,
            "failures": list(self.failures),
        }


def _percentiles(samples) -> dict:
    arr = np.asarray(samples, dtype=float)
    return {
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
    }


def benchmark_latency(
    backend,
    image_refs,
    kinds,
    mode: str = MODE_INDIVIDUAL,
    repetitions: int = 1,
    clock=None,
) -> LatencyReport:
    """Time backend calls, strictly sequentially, around ``ask``.

    Individual mode issues one call per (image, kind); joint mode one fused
    call per image, with the per-query figure derived by dividing the call
    time across its questions. ``total_ms`` is the mean cost of covering all
    kinds for one image. A failure mid-run flags the report as partial.
    """
    if repetitions < 1:
        raise DataError("repetitions must be at least 1")
    resolved = resolve_kinds(kinds)
    clock = clock or MonotonicClock()

    from .queries import _ask_one  # shared dispatch helper

    per_query = []
    totals = []
    calls = 0
    failures = []
    partial = False
    for _ in range(repetitions):
        for image_ref in image_refs:
            try:
                if mode == MODE_JOINT:
                    query = build_joint_query(image_ref, resolved)
                    t0 = clock.now_ms()
                    _ask_one(backend, image_ref, None, query)
                    elapsed = clock.now_ms() - t0
                    calls += 1
                    per_query.extend([elapsed / len(resolved)] * len(resolved))
                    totals.append(elapsed)
                else:
                    frame_total = 0.0
                    for query in build_individual_queries(image_ref, resolved):
                        t0 = clock.now_ms()
                        _ask_one(backend, image_ref, None, query)
                        elapsed = clock.now_ms() - t0
                        calls += 1
                        per_query.append(elapsed)
                        frame_total += elapsed
                    totals.append(frame_total)
            except TransportError as exc:
                failures.append({"image_ref": image_ref, "error": str(exc)})
                partial = True
    if not per_query:
        raise TransportError("no benchmark call succeeded", failed_query_ids=[])
    return LatencyReport(
        mode=mode,
        per_query_ms=_percentiles(per_query),
        total_ms=float(np.mean(totals)),
        calls=calls,
        partial=partial,
        failures=failures,
    )
