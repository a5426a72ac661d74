"""Alarm intake, three-filter assessment and run statistics."""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

from .irr import DEFAULT_MAX_DEPTH, IrrGraph, irr_filter
from .model import Prefix, check_asn, is_subprefix, parse_asn
from .rib import BgpUpdate, EventKey, RibEngine
from .tls import (
    DEFAULT_PARALLELISM,
    DEFAULT_SCAN_BUDGET,
    DEFAULT_TARGET_TIMEOUT,
    GroundTruth,
    Scanner,
    tls_filter,
)
from .topology import PathSet, collect_paths, topology_filter
from .verdict import FilterVerdict, Status

log = logging.getLogger(__name__)

FILTER_NAMES = ("irr", "topology", "tls")
FILTER_LABELS = {"irr": "IRR analysis", "topology": "topology reasoning", "tls": "SSL/TLS scans"}


class AlarmRejected(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Alarm:
    victim_as: int
    victim_prefix: Prefix
    attacker_as: int
    attacker_subprefix: Prefix
    reported_at: int
    source: str = "external"

    def __post_init__(self) -> None:
        try:
            check_asn(self.victim_as)
            check_asn(self.attacker_as)
        except ValueError as exc:
            raise AlarmRejected(str(exc)) from None
        if self.victim_as == self.attacker_as:
            raise AlarmRejected("victim and attacker are the same AS")
        if self.attacker_subprefix == self.victim_prefix:
            raise AlarmRejected("attacker prefix equals victim prefix (not a subprefix conflict)")
        if not is_subprefix(self.attacker_subprefix, self.victim_prefix):
            raise AlarmRejected("attacker prefix is not a subprefix of the victim prefix")

    @property
    def key(self) -> EventKey:
        return EventKey(self.victim_as, self.victim_prefix, self.attacker_as, self.attacker_subprefix)

    @property
    def ref(self) -> str:
        return f"{self.victim_as} {self.victim_prefix} {self.attacker_as} {self.attacker_subprefix}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "victim_as": self.victim_as,
            "victim_prefix": str(self.victim_prefix),
            "attacker_as": self.attacker_as,
            "attacker_subprefix": str(self.attacker_subprefix),
            "reported_at": self.reported_at,
            "source": self.source,
        }

    def to_line(self) -> str:
        return f"{self.ref} {self.reported_at} {self.source}"


def parse_alarm(record: str | Mapping[str, Any]) -> Alarm:
    """Parse ``<victim_as> <victim_prefix> <attacker_as> <attacker_subprefix> <ts> [source]``
    or an equivalent JSON object / mapping."""
    if isinstance(record, str):
        text = record.strip()
        if text.startswith("{"):
            try:
                record = json.loads(text)
            except json.JSONDecodeError as exc:
                raise AlarmRejected(f"bad JSON: {exc}") from None
        else:
            fields = text.split()
            if len(fields) not in (5, 6):
                raise AlarmRejected(f"expected 5 or 6 fields, got {len(fields)}")
            record = dict(
                zip(("victim_as", "victim_prefix", "attacker_as", "attacker_subprefix", "reported_at", "source"), fields)
            )
    try:
        return Alarm(
            victim_as=parse_asn(str(record["victim_as"])),
            victim_prefix=Prefix.parse(str(record["victim_prefix"])),
            attacker_as=parse_asn(str(record["attacker_as"])),
            attacker_subprefix=Prefix.parse(str(record["attacker_subprefix"])),
            reported_at=int(float(record["reported_at"])),
            source=str(record.get("source") or "external"),
        )
    except AlarmRejected:
        raise
    except KeyError as exc:
        raise AlarmRejected(f"missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise AlarmRejected(str(exc)) from None


def read_alarms(lines: Iterable[str], rejections: Counter | None = None) -> list[Alarm]:
    out = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(parse_alarm(line))
        except AlarmRejected as exc:
            if rejections is not None:
                rejections[exc.reason] += 1
            log.info("rejected alarm %r: %s", line, exc.reason)
    return out


class Cumulative(str, enum.Enum):
    LEGITIMATE = "legitimate"
    SUSPICIOUS = "suspicious"
    NOT_COVERED = "not_covered"


@dataclass(frozen=True)
class Assessment:
    alarm: Alarm
    irr: FilterVerdict
    topology: FilterVerdict
    tls: FilterVerdict
    occurrences: int = 1

    @property
    def verdicts(self) -> dict[str, FilterVerdict]:
        return {"irr": self.irr, "topology": self.topology, "tls": self.tls}

    @property
    def cumulative(self) -> Cumulative:
        verdicts = self.verdicts.values()
        if any(v.legitimate for v in verdicts):
            return Cumulative.LEGITIMATE
        if all(v.status is Status.NOT_COVERED for v in verdicts):
            return Cumulative.NOT_COVERED
        return Cumulative.SUSPICIOUS

    @property
    def legitimized_by(self) -> list[str]:
        return [n for n, v in self.verdicts.items() if v.legitimate]

    @property
    def evidence(self) -> list[dict[str, Any]]:
        return [{"filter": n, **v.evidence} for n, v in self.verdicts.items() if v.evidence]

    def to_dict(self) -> dict[str, Any]:
        return {
            "alarm": self.alarm.to_dict(),
            "occurrences": self.occurrences,
            "cumulative": self.cumulative.value,
            "filters": {n: v.to_dict() for n, v in self.verdicts.items()},
        }


@dataclass
class Stores:
    engine: RibEngine | None = None
    irr: IrrGraph | None = None
    ground_truth: GroundTruth | None = None
    scanner: Scanner | None = None
    max_depth: int = DEFAULT_MAX_DEPTH
    scan_timeout: float = DEFAULT_TARGET_TIMEOUT
    scan_budget: float = DEFAULT_SCAN_BUDGET
    scan_parallelism: int = DEFAULT_PARALLELISM


def _tls_verdict(alarm: Alarm, stores: Stores) -> FilterVerdict:
    if stores.ground_truth is None or stores.scanner is None:
        return FilterVerdict.not_covered(reason="no ground truth or scanner")
    if stores.engine is None:
        return FilterVerdict.not_covered(reason="no routing data")
    occurrence = stores.engine.occurrence_at(alarm.key, alarm.reported_at)
    if occurrence is None:
        return FilterVerdict.not_covered(reason="event never observed in routing data")
    return tls_filter(
        stores.ground_truth,
        stores.scanner,
        occurrence,
        stores.engine.journal,
        start=max(alarm.reported_at, occurrence.first_seen),
        timeout=stores.scan_timeout,
        budget=stores.scan_budget,
        parallelism=stores.scan_parallelism,
    )


def assess(
    alarm: Alarm,
    stores: Stores,
    *,
    paths: PathSet | None = None,
    order: Sequence[str] = FILTER_NAMES,
    executor: Executor | None = None,
    occurrences: int = 1,
) -> Assessment:
    """Run the three filters independently over read-only stores.

    ``paths`` pins the AS paths seen when the alarm arrived; without it they
    are collected from the current tree.
    """
    tree = stores.engine.tree if stores.engine is not None else None

    def run_topology() -> FilterVerdict:
        ps = paths if paths is not None else collect_paths(tree, alarm)
        return topology_filter(ps, alarm.victim_as, alarm.attacker_as)

    runners: dict[str, Callable[[], FilterVerdict]] = {
        "irr": lambda: irr_filter(stores.irr, alarm, stores.max_depth),
        "topology": run_topology,
        "tls": lambda: _tls_verdict(alarm, stores),
    }
    if sorted(order) != sorted(FILTER_NAMES):
        raise ValueError(f"filter order must be a permutation of {FILTER_NAMES}")
    own = executor is None
    pool = executor or ThreadPoolExecutor(max_workers=len(runners))
    try:
        futures = {name: pool.submit(runners[name]) for name in order}
        results = {name: f.result() for name, f in futures.items()}
    finally:
        if own:
            pool.shutdown()
    return Assessment(alarm, results["irr"], results["topology"], results["tls"], occurrences)


# -- reporting ----------------------------------------------------------------


@dataclass
class FilterStats:
    covered: int = 0
    legitimate: int = 0
    unique: int = 0


@dataclass
class RunReport:
    total_events: int = 0
    filters: dict[str, FilterStats] = field(default_factory=lambda: {n: FilterStats() for n in FILTER_NAMES})
    cumulative_legitimate_distinct: int = 0
    legitimate_total: int = 0
    suspicious: int = 0
    not_covered: int = 0
    covered: int = 0
    coverage: float = 0.0
    recurrence_mean: float = 0.0
    recurrence_max: int = 0
    occurrences: int = 0
    rejected_alarms: int = 0
    rejections: dict[str, int] = field(default_factory=dict)
    tls_scans: dict[str, int] = field(default_factory=dict)

    @property
    def single_filter_unique(self) -> dict[str, int]:
        return {n: s.unique for n, s in self.filters.items()}

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunReport":
        data = dict(data)
        data["filters"] = {n: FilterStats(**s) for n, s in data["filters"].items()}
        return cls(**data)


def build_report(assessments: Sequence[Assessment], rejections: Mapping[str, int] | None = None) -> RunReport:
    rep = RunReport()
    rep.total_events = len(assessments)
    legit_sets: dict[str, set[str]] = {n: set() for n in FILTER_NAMES}
    tls_scans: Counter = Counter()
    for a in assessments:
        for name, v in a.verdicts.items():
            stats = rep.filters[name]
            if v.covered:
                stats.covered += 1
            if v.legitimate:
                stats.legitimate += 1
                legit_sets[name].add(a.alarm.ref)
        by = a.legitimized_by
        if len(by) == 1:
            rep.filters[by[0]].unique += 1
        cum = a.cumulative
        if cum is Cumulative.SUSPICIOUS:
            rep.suspicious += 1
        elif cum is Cumulative.NOT_COVERED:
            rep.not_covered += 1
        counts = a.tls.evidence.get("counts", {})
        if a.tls.status is Status.DISCARDED:
            tls_scans["discarded"] += a.tls.evidence.get("scanned", 0)
        else:
            tls_scans.update(counts)
    rep.cumulative_legitimate_distinct = len(set().union(*legit_sets.values()))
    rep.legitimate_total = sum(s.legitimate for s in rep.filters.values())
    rep.covered = rep.total_events - rep.not_covered
    rep.coverage = rep.covered / rep.total_events if rep.total_events else 0.0
    occ = [a.occurrences for a in assessments]
    rep.occurrences = sum(occ)
    rep.recurrence_mean = sum(occ) / len(occ) if occ else 0.0
    rep.recurrence_max = max(occ, default=0)
    rep.rejections = dict(sorted((rejections or {}).items()))
    rep.rejected_alarms = sum(rep.rejections.values())
    rep.tls_scans = dict(sorted(tls_scans.items()))
    return rep


def _pct(n: int, total: int) -> str:
    return f"{(100.0 * n / total if total else 0.0):.2f}%"


def emit_report(
    report: RunReport, fmt: str = "table", assessments: Sequence[Assessment] | None = None
) -> bytes:
    """Render a report as an aligned text table or as canonical JSON."""
    if fmt == "structured":
        doc: dict[str, Any] = {"report": report.to_dict()}
        if assessments is not None:
            doc["assessments"] = [a.to_dict() for a in assessments]
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")

    total = report.total_events
    rows = [("All subMOAS events", total), ("Covered events", report.covered)]
    rows += [(FILTER_LABELS[n], report.filters[n].legitimate) for n in FILTER_NAMES]
    rows.append(("Legitimate events (cum.)", report.cumulative_legitimate_distinct))
    width = max(len(r[0]) for r in rows) + 2
    lines = [f"{'':<{width}}{'total':>8}{'in %':>10}"]
    for label, n in rows:
        lines.append(f"{label:<{width}}{n:>8}{_pct(n, total):>10}")
    lines.append("")
    lines.append(f"{'Legitimized by one filter only':<{width}}{'total':>8}{'in %':>10}")
    for n in FILTER_NAMES:
        lines.append(f"{FILTER_LABELS[n]:<{width}}{report.filters[n].unique:>8}{_pct(report.filters[n].unique, total):>10}")
    lines.append("")
    lines.append(f"{'Filter coverage':<{width}}{'covered':>8}{'legit':>10}")
    for n in FILTER_NAMES:
        s = report.filters[n]
        lines.append(f"{FILTER_LABELS[n]:<{width}}{s.covered:>8}{s.legitimate:>10}")
    lines.append("")
    lines.append(f"Suspicious events: {report.suspicious}   not covered: {report.not_covered}")
    lines.append(
        f"Recurrence: {report.occurrences} occurrences, mean {report.recurrence_mean:.2f}, max {report.recurrence_max}"
    )
    if report.rejected_alarms:
        lines.append(f"Rejected alarms: {report.rejected_alarms}")
        for reason, n in report.rejections.items():
            lines.append(f"  {n:>5}  {reason}")
    if report.tls_scans:
        lines.append("SSL/TLS scan results: " + ", ".join(f"{k} {v}" for k, v in report.tls_scans.items()))
    return ("\n".join(lines) + "\n").encode()


def parse_report(data: bytes | str) -> RunReport:
    doc = json.loads(data)
    return RunReport.from_dict(doc["report"] if "report" in doc else doc)


# -- batch --------------------------------------------------------------------


@dataclass
class BatchResult:
    report: RunReport
    assessments: list[Assessment]


def _scan_deadline(alarm: Alarm, stores: Stores) -> float:
    # latest instant a scan started for this alarm can still produce a result
    return alarm.reported_at + stores.scan_budget + stores.scan_timeout


class AlarmQueue:
    """Deduplicates alarms and assesses each once the feed has caught up.

    AS paths are pinned when an alarm arrives.  Assessment waits until the
    feed has moved past the end of any scan the alarm could trigger, so the
    stability check sees the full event history while the journal stays
    bounded.  Callers feed updates through :meth:`apply`.
    """

    def __init__(self, stores: Stores, executor: Executor | None = None):
        if stores.engine is None:
            stores.engine = RibEngine()
        self.stores = stores
        self.executor = executor
        self.first: dict[EventKey, Alarm] = {}
        self.counts: Counter = Counter()
        self._paths: dict[EventKey, PathSet] = {}
        self._waiting: list[Alarm] = []
        self._done: dict[EventKey, Assessment] = {}

    def take(self, alarm: Alarm) -> Assessment | None:
        """Queue an alarm; returns its assessment if it can be decided already."""
        self.counts[alarm.key] += 1
        if alarm.key not in self.first:
            self.first[alarm.key] = alarm
            self._paths[alarm.key] = collect_paths(self.stores.engine.tree, alarm)
            self._waiting.append(alarm)
            end = self.stores.engine.journal.end
            if end is not None and _scan_deadline(alarm, self.stores) <= end:
                self._settle([alarm])
        return self.result(alarm.key)

    def result(self, key: EventKey) -> Assessment | None:
        a = self._done.get(key)
        return replace(a, occurrences=self.counts[key]) if a is not None else None

    def _settle(self, alarms: list[Alarm]) -> None:
        for a in alarms:
            self._waiting.remove(a)
            self._done[a.key] = assess(a, self.stores, paths=self._paths.pop(a.key), executor=self.executor)

    def apply(self, u: BgpUpdate):
        ready = [a for a in self._waiting if _scan_deadline(a, self.stores) < u.timestamp]
        if ready:
            # nothing changes before this update, so the journal covers up to its timestamp
            self.stores.engine.journal.extend_to(u.timestamp)
            self._settle(ready)
        return self.stores.engine.apply_update(u)

    def flush(self) -> None:
        """Assess everything still waiting against the journal as it stands."""
        self._settle(list(self._waiting))

    @property
    def pending(self) -> list[Alarm]:
        return list(self._waiting)

    def assessments(self) -> list[Assessment]:
        return [r for r in (self.result(k) for k in self.first) if r is not None]


def run_batch(
    feed: Iterable[BgpUpdate],
    alarms: Iterable[Alarm] | None,
    stores: Stores,
    *,
    rejections: Mapping[str, int] | None = None,
) -> BatchResult:
    """Replay ``feed`` and assess alarms; ``alarms=None`` means self-detect.

    In self-detect mode every strict subMOAS that opens during the replay
    becomes an alarm.  External alarms see the feed up to their report time.
    Identical alarms are assessed once and carry an occurrence count.
    """
    pending = sorted(alarms, key=lambda a: a.reported_at) if alarms is not None else None
    i = 0
    with ThreadPoolExecutor(max_workers=len(FILTER_NAMES)) as pool:
        queue = AlarmQueue(stores, pool)
        for u in feed:
            if pending is not None:
                while i < len(pending) and pending[i].reported_at < u.timestamp:
                    queue.take(pending[i])
                    i += 1
            result = queue.apply(u)
            if pending is None:
                for ev in result.opened:
                    queue.take(Alarm(*ev.key, reported_at=ev.first_seen, source="self-detect"))
        for alarm in (pending or [])[i:]:
            queue.take(alarm)
        queue.flush()
    assessments = queue.assessments()
    return BatchResult(build_report(assessments, rejections), assessments)
