"""Command-line entry point (``hijack-assess``)."""

from __future__ import annotations

import json
import logging
import sys
from collections import Counter
from pathlib import Path

import click

from .assessment import Stores, emit_report, read_alarms, run_batch
from .irr import DEFAULT_MAX_DEPTH, graph_from_snapshots, load_snapshot
from .rib import DEFAULT_RETENTION, JournalCoverageError, RibEngine, diff_snapshots, read_feed, write_feed
from .tls import (
    DEFAULT_PARALLELISM,
    SimulatedScanner,
    build_ground_truth,
    read_observations,
    sanitize_ground_truth,
)

EXIT_INPUT = 2
EXIT_MALFORMED = 3

existing = click.Path(exists=True, dir_okay=False, path_type=Path)


class InputError(click.ClickException):
    exit_code = EXIT_MALFORMED


def _report_diagnostics(label: str, diagnostics: list[str], strict: bool) -> None:
    for d in diagnostics[:20]:
        click.echo(f"{label}: {d}", err=True)
    if len(diagnostics) > 20:
        click.echo(f"{label}: ... {len(diagnostics) - 20} more", err=True)
    if diagnostics and strict:
        raise InputError(f"{len(diagnostics)} malformed record(s) in {label}")


def _read_updates(path: Path, fmt: str, diagnostics: list[str]):
    if fmt == "mrt":
        from .mrt import iter_mrt

        return list(iter_mrt(path, diagnostics))
    return read_feed(path, diagnostics)


def load_stores(
    *,
    table_dump: Path | None,
    irr: tuple[Path, ...],
    ground_truth: Path | None,
    scanner_fixture: Path | None,
    seed: int,
    max_depth: int,
    retention: float,
    parallelism: int,
    strict: bool,
    feed_format: str = "text",
) -> Stores:
    engine = RibEngine(retention=retention)
    if table_dump is not None:
        diags: list[str] = []
        engine.load_table_dump(_read_updates(table_dump, feed_format, diags))
        _report_diagnostics(str(table_dump), diags + engine.diagnostics, strict)
    graph = None
    if irr:
        results = [load_snapshot(p) for p in irr]
        for p, r in zip(irr, results):
            _report_diagnostics(str(p), r.diagnostics, strict)
        graph = graph_from_snapshots(results, tag=",".join(p.name for p in irr))
    gt = None
    if ground_truth is not None:
        diags = []
        gt = build_ground_truth(read_observations(ground_truth, diags))
        _report_diagnostics(str(ground_truth), diags, strict)
    scanner = None
    if scanner_fixture is not None:
        diags = []
        scanner = SimulatedScanner.from_file(scanner_fixture, seed=seed, diagnostics=diags)
        _report_diagnostics(str(scanner_fixture), diags, strict)
    return Stores(
        engine=engine, irr=graph, ground_truth=gt, scanner=scanner, max_depth=max_depth, scan_parallelism=parallelism
    )


def store_options(f):
    opts = [
        click.option("--table-dump", type=existing, help="Baseline table export in feed format."),
        click.option("--irr", "irr", type=existing, multiple=True, help="RPSL snapshot (repeatable, gzip ok)."),
        click.option("--ground-truth", type=existing, help="TLS key observations taken before the events."),
        click.option("--scanner-fixture", type=existing, help="Scripted scan responses for simulation."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--max-depth", type=click.IntRange(min=1), default=DEFAULT_MAX_DEPTH, show_default=True),
        click.option("--journal-retention", type=float, default=DEFAULT_RETENTION, show_default=True,
                     help="Seconds of event history kept for stability checks."),
        click.option("--parallelism", type=click.IntRange(min=1), default=DEFAULT_PARALLELISM, show_default=True),
        click.option("--feed-format", type=click.Choice(["text", "mrt"]), default="text", show_default=True),
        click.option("--strict", is_flag=True, help="Treat malformed input records as fatal."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose: int) -> None:
    """Assess subprefix hijack alarms against IRR, topology and TLS evidence."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--feed", type=existing, required=True, help="BGP update feed.")
@click.option("--alarms", type=existing, help="Alarm file (text or JSON lines).")
@click.option("--self-detect", is_flag=True, help="Assess every strict subMOAS found in the feed (default).")
@click.option("--report", "report_fmt", type=click.Choice(["table", "structured"]), default="table", show_default=True)
@click.option("--sanitize", is_flag=True, help="Drop ground-truth hosts that sat inside an active subMOAS.")
@click.option("--output", "-o", type=click.Path(dir_okay=False, path_type=Path), help="Write the report here.")
@store_options
def assess(feed, alarms, self_detect, report_fmt, sanitize, output, table_dump, irr, ground_truth,
           scanner_fixture, seed, max_depth, journal_retention, parallelism, feed_format, strict):
    """Replay FEED and assess alarms (or self-detected events)."""
    if alarms is not None and self_detect:
        raise click.UsageError("--alarms and --self-detect are mutually exclusive")
    stores = load_stores(
        table_dump=table_dump, irr=irr, ground_truth=ground_truth, scanner_fixture=scanner_fixture, seed=seed,
        max_depth=max_depth, retention=journal_retention, parallelism=parallelism, strict=strict,
        feed_format=feed_format,
    )
    diags: list[str] = []
    updates = _read_updates(feed, feed_format, diags)
    _report_diagnostics(str(feed), diags, strict)

    rejections: Counter = Counter()
    alarm_list = None
    if alarms is not None:
        with open(alarms, encoding="utf-8") as fh:
            alarm_list = read_alarms(fh, rejections)

    if sanitize and stores.ground_truth is not None:
        # a dry replay gives the journal needed to clean the ground truth
        probe = RibEngine(retention=None)
        if table_dump is not None:
            probe.load_table_dump(_read_updates(table_dump, feed_format, []))
        probe.replay(updates)
        try:
            stores.ground_truth = sanitize_ground_truth(stores.ground_truth, probe.journal)
        except JournalCoverageError as exc:
            raise InputError(f"cannot sanitize ground truth: {exc}") from None

    result = run_batch(updates, alarm_list, stores, rejections=rejections)
    _report_diagnostics(str(feed), stores.engine.diagnostics, False)
    body = emit_report(result.report, report_fmt, result.assessments if report_fmt == "structured" else None)
    if output is not None:
        output.write_bytes(body)
    else:
        sys.stdout.buffer.write(body)
        sys.stdout.flush()


@main.command()
@click.option("--feed", type=existing, help="Feed to replay before serving.")
@click.option("--stdio", is_flag=True, help="Serve JSON lines on stdin/stdout instead of HTTP.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--live-scan", is_flag=True, help="Scan real hosts instead of a fixture.")
@store_options
def serve(feed, stdio, host, port, live_scan, table_dump, irr, ground_truth, scanner_fixture, seed, max_depth,
          journal_retention, parallelism, feed_format, strict):
    """Run the long-lived assessment service."""
    from .service import AssessmentService

    stores = load_stores(
        table_dump=table_dump, irr=irr, ground_truth=ground_truth, scanner_fixture=scanner_fixture, seed=seed,
        max_depth=max_depth, retention=journal_retention, parallelism=parallelism, strict=strict,
        feed_format=feed_format,
    )
    if live_scan:
        from .tls import NetworkScanner

        stores.scanner = NetworkScanner()
    service = AssessmentService(stores)
    if feed is not None:
        diags: list[str] = []
        service.ingest(_read_updates(feed, feed_format, diags))
        _report_diagnostics(str(feed), diags, strict)
    if stdio:
        from .service.stdio import serve_stdio

        serve_stdio(service, sys.stdin, sys.stdout)
        return
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(service), host=host, port=port, log_level="info")


@main.command()
@click.argument("alarms", type=existing)
@click.option("--url", default="http://127.0.0.1:8080", show_default=True)
@click.option("--report", "want_report", is_flag=True, help="Print the service report afterwards.")
def submit(alarms, url, want_report):
    """Send alarms from a file to a running service and print the replies."""
    import httpx

    from .assessment import AlarmRejected, parse_alarm

    failures = 0
    with httpx.Client(base_url=url, timeout=None) as client, open(alarms, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                payload = parse_alarm(line).to_dict()
            except AlarmRejected as exc:
                click.echo(json.dumps({"rejected": True, "reason": exc.reason}))
                failures += 1
                continue
            r = client.post("/alarms", json=payload)
            click.echo(json.dumps(r.json(), sort_keys=True))
        if want_report:
            click.echo(client.get("/report", params={"format": "table"}).text, nl=False)
    if failures:
        sys.exit(EXIT_MALFORMED)


@main.command("export-irr")
@click.option("--irr", "irr", type=existing, multiple=True, required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
def export_irr(irr, out):
    """Write the typed IRR graph as nodes.csv / edges.csv."""
    results = [load_snapshot(p) for p in irr]
    for p, r in zip(irr, results):
        _report_diagnostics(str(p), r.diagnostics, False)
    nodes, edges = graph_from_snapshots(results).export_csv(out)
    click.echo(f"{nodes}\n{edges}")


@main.command("feed-from-snapshots")
@click.argument("old", type=existing)
@click.argument("new", type=existing)
@click.option("--timestamp", type=int, required=True, help="Timestamp stamped on the derived updates.")
def feed_from_snapshots(old, new, timestamp):
    """Diff two table exports into feed updates."""
    diags: list[str] = []
    updates = diff_snapshots(read_feed(old, diags), read_feed(new, diags), timestamp)
    _report_diagnostics("snapshots", diags, False)
    write_feed(updates, sys.stdout)


@main.command("mrt-to-feed")
@click.argument("source", type=existing)
def mrt_to_feed(source):
    """Convert an MRT file to the text feed format."""
    from .mrt import iter_mrt

    diags: list[str] = []
    write_feed(iter_mrt(source, diags), sys.stdout)
    _report_diagnostics(str(source), diags, False)


if __name__ == "__main__":
    main()
