"""Command-line entry point: every workflow as a subcommand.

Exit codes: 0 ok, 2 usage, 3 config, 4 backend, 5 data. Failures print one
machine-readable line to stderr. Randomized commands take an explicit
--seed so runs are reproducible by construction.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .annotation import Decision, load_decisions, machine_annotate, review, sample_for_review
from .config import AppConfig, load_config
from .dataset import (
    SplitSpec,
    export_vqa,
    import_vqa,
    load_manifest,
    render_stats_table,
    sample_shots,
    save_manifest,
    split,
    stats,
    DatasetManifest,
)
from .errors import (
    CapabilityError,
    ConfigError,
    ContextdError,
    DataError,
    ProtocolError,
    TransportError,
)
from .evaluation import benchmark_latency, evaluate
from .fileio import atomic_write_text, canonical_json
from .protocol.client import open_backend
from .protocol.messages import AskRequest, ImagePayload, Question
from .queries import parse_individual_answer
from .runner import DirectoryFrameSource, Runner, SchedulerConfig, open_sink
from .taxonomy import all_kind_ids, resolve_kinds

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_BACKEND = 4
EXIT_DATA = 5

log = logging.getLogger("contextd")


def _setup_logging() -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("level=%(levelname)s msg=%(message)s"))
    root = logging.getLogger()
    if not root.handlers:
        root.addHandler(handler)
        root.setLevel(logging.INFO)


@click.group(name="contextd")
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to the JSON application config.")
@click.pass_context
def cli(ctx, config_path):
    """Driving-context recognition: annotation, datasets, evaluation, and the edge loop."""
    _setup_logging()
    ctx.obj = load_config(config_path)


def _load_catalog(path) -> list:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
        images = raw["images"]
    except FileNotFoundError:
        raise DataError(f"image catalog {path!r} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"image catalog {path!r} is malformed: {exc}") from exc
    return images


@cli.command()
@click.option("--images", "images_path", required=True, type=click.Path(),
              help="Image catalog JSON (image_id, image_ref, dimensions, subset).")
@click.option("--backend", "backend_specs", multiple=True, required=True,
              help="Backend endpoint or configured name; repeat for agreement.")
@click.option("--threshold", type=float, default=None,
              help="Agreement confidence threshold (strict); defaults from config.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Manifest bundle to write with the agreed records.")
@click.option("--uncertain-out", type=click.Path(), default=None,
              help="Where to write items the agreement rule declined (JSONL).")
@click.option("--emit-negatives/--no-emit-negatives", default=True,
              help="Also record unanimous confident 'no' answers.")
@click.pass_obj
def annotate(cfg: AppConfig, images_path, backend_specs, threshold, out_path,
             uncertain_out, emit_negatives):
    """Machine-annotate a catalog of images by multi-backend agreement."""
    threshold = cfg.annotation_threshold if threshold is None else threshold
    images = _load_catalog(images_path)
    backends = [open_backend(cfg.resolve_backend(spec)) for spec in backend_specs]

    from .dataset import ImageMeta
    from .taxonomy import taxonomy_version

    metas, records, uncertain = [], [], []
    next_qid = 0
    for im in images:
        meta = ImageMeta(
            image_id=im["image_id"], image_ref=im["image_ref"],
            width=int(im.get("width", 1)), height=int(im.get("height", 1)),
            source_subset=im.get("source_subset", "ma_corpus"),
        )
        metas.append(meta)
        recs, unc = machine_annotate(
            meta.image_ref, all_kind_ids(), backends, threshold,
            image_id=meta.image_id, source_subset=meta.source_subset,
            emit_negatives=emit_negatives, question_id_start=next_qid,
        )
        next_qid += len(recs)
        records.extend(recs)
        uncertain.extend(unc)

    manifest = DatasetManifest(
        name=f"annotated:{Path(images_path).stem}",
        images=tuple(metas), records=tuple(records),
        taxonomy_version=taxonomy_version(),
    )
    save_manifest(manifest, out_path)
    if uncertain_out:
        lines = [
            json.dumps({
                "image_id": u.image_id, "kind": u.kind_id, "reason": u.reason,
                "votes": [
                    {"backend": v.backend, "verdict": v.verdict.value, "confidence": v.confidence}
                    for v in u.backend_votes
                ],
            }, sort_keys=True)
            for u in uncertain
        ]
        atomic_write_text(uncertain_out, "\n".join(lines) + ("\n" if lines else ""))
    click.echo(f"annotated {len(records)} records, {len(uncertain)} uncertain "
               f"across {len(metas)} images")


@cli.command(name="review")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--sample-rate", type=float, default=None,
              help="Review only a stratified sample of this fraction.")
@click.option("--seed", type=int, default=None,
              help="Seed for sampling; required with --sample-rate.")
@click.option("--decisions", "decisions_path", type=click.Path(), default=None,
              help="Batch decisions file (JSONL) instead of interactive review.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--audit-log", "audit_path", required=True, type=click.Path())
@click.pass_obj
def review_cmd(cfg, manifest_path, sample_rate, seed, decisions_path, out_path, audit_path):
    """Verify records interactively or replay a decisions file."""
    manifest = load_manifest(manifest_path)
    records = list(manifest.records)
    if sample_rate is not None:
        if seed is None:
            raise click.UsageError("--sample-rate requires an explicit --seed")
        sampled = sample_for_review(records, sample_rate, seed)
    else:
        sampled = records

    if decisions_path is not None:
        decisions = load_decisions(decisions_path)
    else:
        decisions = _interactive_decisions(sampled)

    result = review(records, decisions, audit_path=audit_path)
    updated = DatasetManifest(
        name=manifest.name, images=manifest.images,
        records=tuple(result.records), taxonomy_version=manifest.taxonomy_version,
    )
    save_manifest(updated, out_path)
    outcomes = {}
    for entry in result.audit:
        outcomes[entry.outcome] = outcomes.get(entry.outcome, 0) + 1
    click.echo(f"review finished: {outcomes}")


def _interactive_decisions(sampled):
    decisions = []
    click.echo(f"{len(sampled)} records to review: [a]ccept [r]eject [s]kip [q]uit")
    for rec in sampled:
        votes = ", ".join(
            f"{v.backend}:{v.verdict.value}@{v.confidence:.2f}" for v in rec.backend_votes
        ) or "(no votes)"
        click.echo(f"#{rec.question_id} image={rec.image_id} q={rec.question!r} "
                   f"answer={rec.answer} votes={votes}")
        choice = click.prompt("decision", type=click.Choice(["a", "r", "s", "q"]),
                              default="s", show_default=False)
        if choice == "q":
            break
        action = {"a": "accept", "r": "reject", "s": "skip"}[choice]
        decisions.append(Decision(record_id=rec.question_id, action=action))
    return decisions


@cli.command(name="import")
@click.option("--questions", "questions_path", required=True, type=click.Path())
@click.option("--annotations", "annotations_path", required=True, type=click.Path())
@click.option("--images", "images_path", required=True, type=click.Path())
@click.option("--side", "side_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--rejected-out", type=click.Path(), default=None)
def import_cmd(questions_path, annotations_path, images_path, side_path, out_path, rejected_out):
    """Import VQA-format files into a manifest bundle."""
    manifest, rejected = import_vqa(questions_path, annotations_path, images_path, side_path)
    save_manifest(manifest, out_path)
    if rejected_out:
        atomic_write_text(rejected_out, canonical_json(rejected))
    click.echo(f"imported {manifest.record_count} records over "
               f"{manifest.image_count} images; rejected {len(rejected)} questions")


@cli.command(name="export")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
def export_cmd(manifest_path, out_dir):
    """Export a manifest bundle to VQA-format files."""
    manifest = load_manifest(manifest_path)
    paths = export_vqa(manifest, out_dir)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@cli.command(name="stats")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
def stats_cmd(manifest_path):
    """Per-kind and per-subset counts for a manifest."""
    manifest = load_manifest(manifest_path)
    click.echo(render_stats_table(stats(manifest)))


@cli.command(name="split")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--ratio", type=float, default=0.7, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out-train", required=True, type=click.Path())
@click.option("--out-test", required=True, type=click.Path())
def split_cmd(manifest_path, ratio, seed, out_train, out_test):
    """Deterministic image-level train/test split."""
    manifest = load_manifest(manifest_path)
    train, test = split(manifest, SplitSpec(train_fraction=ratio, seed=seed))
    save_manifest(train, out_train)
    save_manifest(test, out_test)
    click.echo(f"train: {train.image_count} images / {train.record_count} pairs; "
               f"test: {test.image_count} images / {test.record_count} pairs")


@cli.command(name="shots")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--k", type=int, required=True, help="Number of shots to draw.")
@click.option("--seed", type=int, required=True)
@click.option("--unit", type=click.Choice(["pair", "image"]), default="pair", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def shots_cmd(manifest_path, k, seed, unit, out_path):
    """Draw a nested, stratified few-shot subset as a manifest bundle."""
    manifest = load_manifest(manifest_path)
    records = sample_shots(manifest, k, seed, unit=unit)
    keep_images = {r.image_id for r in records}
    subset = DatasetManifest(
        name=f"{manifest.name}/shots-{k}",
        images=tuple(im for im in manifest.images if im.image_id in keep_images),
        records=tuple(records),
        taxonomy_version=manifest.taxonomy_version,
    )
    save_manifest(subset, out_path)
    click.echo(f"sampled {len(records)} pairs over {len(keep_images)} images")


@cli.command(name="evaluate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--backend", "backend_spec", required=True)
@click.option("--mode", type=click.Choice(["individual", "joint"]), default="individual",
              show_default=True)
@click.option("--fallback/--no-fallback", default=False,
              help="Retry unparseable joint items individually.")
@click.option("--headline", type=click.Choice(["micro", "macro"]), default="micro",
              show_default=True)
@click.option("--report-out", type=click.Path(), default=None)
@click.option("--table-out", type=click.Path(), default=None)
@click.pass_obj
def evaluate_cmd(cfg, manifest_path, backend_spec, mode, fallback, headline,
                 report_out, table_out):
    """Score a backend against a labeled manifest."""
    manifest = load_manifest(manifest_path)
    backend = open_backend(cfg.resolve_backend(backend_spec))
    report = evaluate(manifest, backend, mode=mode, fallback=fallback)
    if report_out:
        atomic_write_text(report_out, report.to_json())
    if table_out:
        atomic_write_text(table_out, report.to_table() + "\n")
    m = report.micro if headline == "micro" else report.macro

    def fmt(x):
        return "undefined" if x is None else f"{x:.4f}"

    click.echo(f"{headline} accuracy={fmt(m.accuracy)} precision={fmt(m.precision)} "
               f"recall={fmt(m.recall)} f1={fmt(m.f1)} "
               f"pairs={report.pair_count} unparseable={report.unparseable_total}")
    if report.failures:
        click.echo(f"partial: {len(report.failures)} images failed", err=True)


@cli.command(name="bench")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Manifest bundle supplying the image refs to benchmark over.")
@click.option("--backend", "backend_spec", required=True)
@click.option("--mode", type=click.Choice(["individual", "joint"]), default="individual",
              show_default=True)
@click.option("--kinds", default="all", show_default=True,
              help="Comma-separated kind ids, or 'all'.")
@click.option("--repetitions", type=int, default=1, show_default=True)
@click.option("--limit", type=int, default=1, show_default=True,
              help="Number of images from the manifest to use.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def bench_cmd(cfg, manifest_path, backend_spec, mode, kinds, repetitions, limit, out_path):
    """Wall-clock latency of individual vs joint querying."""
    manifest = load_manifest(manifest_path)
    backend = open_backend(cfg.resolve_backend(backend_spec))
    kind_list = all_kind_ids() if kinds == "all" else tuple(kinds.split(","))
    refs = [im.image_ref for im in manifest.images[:limit]]
    report = benchmark_latency(backend, refs, kind_list, mode=mode, repetitions=repetitions)
    if out_path:
        atomic_write_text(out_path, canonical_json(report.to_dict()))
    pq = report.per_query_ms
    click.echo(f"mode={report.mode} per_query_ms mean={pq['mean']:.2f} "
               f"p50={pq['p50']:.2f} p95={pq['p95']:.2f} total_ms={report.total_ms:.2f} "
               f"calls={report.calls}")


@cli.command(name="run")
@click.option("--frames", "frames_dir", required=True, type=click.Path(),
              help="Directory of image files; the newest is each cycle's frame.")
@click.option("--backend", "backend_spec", required=True)
@click.option("--sink", "sink_target", required=True,
              help="File path or tcp:host:port for state records.")
@click.option("--mode", type=click.Choice(["individual", "joint"]), default="individual",
              show_default=True)
@click.option("--budget-ms", type=float, default=None, help="Per-query budget.")
@click.option("--cycle-ms", type=float, default=None, help="Cycle period.")
@click.option("--kinds", default="all", show_default=True)
@click.option("--refresh-fast", type=float, default=None, help="Fast refresh interval (ms).")
@click.option("--refresh-slow", type=float, default=None, help="Slow refresh interval (ms).")
@click.option("--max-queries-per-cycle", type=int, default=24, show_default=True)
@click.option("--max-cycles", type=int, default=None, help="Stop after this many cycles.")
@click.pass_obj
def run_cmd(cfg, frames_dir, backend_spec, sink_target, mode, budget_ms, cycle_ms,
            kinds, refresh_fast, refresh_slow, max_queries_per_cycle, max_cycles):
    """The edge loop: watch frames, keep the context state fresh, publish."""
    config = SchedulerConfig(
        per_query_budget_ms=budget_ms if budget_ms is not None else cfg.per_query_budget_ms,
        cycle_period_ms=cycle_ms if cycle_ms is not None else cfg.cycle_period_ms,
        refresh_interval_ms={
            "fast": refresh_fast if refresh_fast is not None else cfg.refresh_fast_ms,
            "slow": refresh_slow if refresh_slow is not None else cfg.refresh_slow_ms,
        },
        max_queries_per_cycle=max_queries_per_cycle,
        mode=mode,
        enabled_kinds=() if kinds == "all" else tuple(kinds.split(",")),
    )
    backend = open_backend(cfg.resolve_backend(backend_spec))
    sink = open_sink(sink_target)
    try:
        runner = Runner(config, backend, DirectoryFrameSource(frames_dir), sink)
        final = runner.run(max_cycles=max_cycles)
    finally:
        sink.close()
    known = sum(1 for e in final if e.value != "unknown")
    click.echo(f"stopped after {runner.stats.cycles} cycles; "
               f"{known}/{len(final)} kinds known; "
               f"queries={runner.stats.queries_issued} timeouts={runner.stats.timeouts}")


@cli.command(name="ask")
@click.option("--backend", "backend_spec", required=True)
@click.option("--image", "image_ref", required=True, help="Image locator the backend understands.")
@click.option("--question", required=True, help="A one-off yes/no question.")
@click.pass_obj
def ask_cmd(cfg, backend_spec, image_ref, question):
    """Ask a single free-form question about one image."""
    backend = open_backend(cfg.resolve_backend(backend_spec))
    request = AskRequest(
        id="cli-ask",
        image=ImagePayload.from_locator(image_ref),
        mode="individual",
        questions=(Question(qid="adhoc", text=question),),
    )
    response = backend.ask(request)
    item = next((a for a in response.answers if a.qid == "adhoc"), None)
    answer = parse_individual_answer(
        item.answer_text if item else "",
        confidence=item.confidence if item else None,
    )
    click.echo(f"verdict={answer.verdict.value} confidence={answer.confidence:.3f} "
               f"raw={answer.raw_text!r}")


def main(argv=None) -> int:
    """Invoke the CLI and map exceptions onto the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="contextd")
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except ConfigError as exc:
        _error_line(EXIT_CONFIG, exc)
        return EXIT_CONFIG
    except (TransportError, ProtocolError, CapabilityError) as exc:
        _error_line(EXIT_BACKEND, exc)
        return EXIT_BACKEND
    except DataError as exc:
        _error_line(EXIT_DATA, exc)
        return EXIT_DATA
    except ContextdError as exc:
        _error_line(1, exc)
        return 1


def _error_line(code: int, exc: Exception) -> None:
    message = str(exc).replace('"', "'")
    print(f'error code={code} type={type(exc).__name__} message="{message}"',
          file=sys.stderr)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
