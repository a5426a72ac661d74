"""Binary prefix tree over a replayed BGP feed and strict subMOAS tracking.

Feed lines look like::

    <unix_ts> <A|W> <prefix> <peer_asn> [<asn> <asn> ...]

with the AS path listed observer first.  Table dumps use the same format with
``A`` records only.
"""

from __future__ import annotations

import copy
import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple

from .model import Prefix, Route, RibView, check_asn, collapse_path, is_subprefix, parse_asn

log = logging.getLogger(__name__)

DEFAULT_RETENTION = 72 * 3600


class FeedError(ValueError):
    pass


class JournalCoverageError(LookupError):
    """The journal does not cover the requested interval."""


class UpdateKind(str, enum.Enum):
    ANNOUNCE = "A"
    WITHDRAW = "W"


@dataclass(frozen=True)
class BgpUpdate:
    timestamp: int
    kind: UpdateKind
    prefix: Prefix
    peer: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        check_asn(self.peer)
        if self.kind is UpdateKind.ANNOUNCE and not self.path:
            raise FeedError("announcement without AS path")
        if self.kind is UpdateKind.WITHDRAW and self.path:
            raise FeedError("withdrawal must not carry an AS path")
        for asn in self.path:
            check_asn(asn)

    def to_line(self) -> str:
        parts = [str(self.timestamp), self.kind.value, str(self.prefix), str(self.peer)]
        parts.extend(map(str, self.path))
        return " ".join(parts)


def announce(ts: int, prefix: str | Prefix, path: Iterable[int], peer: int | None = None) -> BgpUpdate:
    """Convenience constructor; the peer defaults to the first path element."""
    path = tuple(path)
    p = prefix if isinstance(prefix, Prefix) else Prefix.parse(prefix)
    return BgpUpdate(ts, UpdateKind.ANNOUNCE, p, peer if peer is not None else path[0], path)


def withdraw(ts: int, prefix: str | Prefix, peer: int) -> BgpUpdate:
    p = prefix if isinstance(prefix, Prefix) else Prefix.parse(prefix)
    return BgpUpdate(ts, UpdateKind.WITHDRAW, p, peer)


def parse_update(line: str) -> BgpUpdate:
    fields = line.split()
    if len(fields) < 4:
        raise FeedError(f"expected at least 4 fields, got {len(fields)}")
    try:
        ts = int(fields[0])
    except ValueError:
        raise FeedError(f"bad timestamp {fields[0]!r}") from None
    try:
        kind = UpdateKind(fields[1].upper())
    except ValueError:
        raise FeedError(f"bad update kind {fields[1]!r}") from None
    try:
        prefix = Prefix.parse(fields[2])
        peer = parse_asn(fields[3])
    except ValueError as exc:
        raise FeedError(str(exc)) from None
    path: list[int] = []
    for token in fields[4:]:
        if token.startswith("{") or token.endswith("}") or "," in token:
            raise FeedError(f"AS_SET path segment not supported: {token!r}")
        try:
            path.append(parse_asn(token))
        except ValueError as exc:
            raise FeedError(str(exc)) from None
    return BgpUpdate(ts, kind, prefix, peer, tuple(path))


def iter_feed(lines: Iterable[str], diagnostics: list[str] | None = None) -> Iterator[BgpUpdate]:
    """Parse feed lines, skipping blanks and ``#`` comments.

    Malformed lines are reported into ``diagnostics`` (or the log) and skipped.
    """
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            yield parse_update(line)
        except (FeedError, ValueError) as exc:
            msg = f"line {lineno}: {exc}"
            if diagnostics is not None:
                diagnostics.append(msg)
            else:
                log.warning("skipping feed record: %s", msg)


def read_feed(path: str | Path, diagnostics: list[str] | None = None) -> list[BgpUpdate]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_feed(fh, diagnostics))


def write_feed(updates: Iterable[BgpUpdate], fh: IO[str]) -> None:
    for u in updates:
        fh.write(u.to_line() + "\n")


# -- prefix tree --------------------------------------------------------------


@dataclass(frozen=True)
class PeerRoute:
    path: tuple[int, ...]
    raw_path: tuple[int, ...]
    first_seen: int
    last_seen: int

    @property
    def origin(self) -> int:
        return self.path[-1]


@dataclass(frozen=True)
class OriginRecord:
    first_seen: int
    last_seen: int
    paths: frozenset[tuple[int, ...]]


class _Node:
    __slots__ = ("children", "routes")

    def __init__(self) -> None:
        self.children: list[_Node | None] = [None, None]
        self.routes: dict[int, PeerRoute] = {}


class PrefixTree:
    """Binary trie keyed on prefix bits; node depth equals prefix length.

    Each node holds the current route of every collector peer that announces
    the prefix.  Nodes left without routes and without children are pruned,
    so the shape of the trie reflects exactly the applied announcements.
    """

    def __init__(self) -> None:
        self._root = _Node()
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _find(self, prefix: Prefix) -> _Node | None:
        node: _Node | None = self._root
        for depth in range(prefix.length):
            node = node.children[prefix.bit(depth)]
            if node is None:
                return None
        return node

    def announce(self, prefix: Prefix, peer: int, path: Iterable[int], ts: int) -> bool:
        """Install ``peer``'s route; return True if the origin set changed."""
        raw = tuple(path)
        collapsed = collapse_path(raw)
        node = self._root
        for depth in range(prefix.length):
            bit = prefix.bit(depth)
            if node.children[bit] is None:
                node.children[bit] = _Node()
            node = node.children[bit]
        before = {r.origin for r in node.routes.values()}
        if not node.routes:
            self._count += 1
        current = node.routes.get(peer)
        if current is not None and current.path == collapsed and current.raw_path == raw:
            node.routes[peer] = replace(current, last_seen=max(current.last_seen, ts))
        else:
            node.routes[peer] = PeerRoute(collapsed, raw, ts, ts)
        return before != {r.origin for r in node.routes.values()}

    def withdraw(self, prefix: Prefix, peer: int) -> bool | None:
        """Remove ``peer``'s route.

        Returns None if the peer had no route for the prefix, otherwise
        whether the origin set changed.
        """
        trail: list[tuple[_Node, int]] = []
        node = self._root
        for depth in range(prefix.length):
            bit = prefix.bit(depth)
            child = node.children[bit]
            if child is None:
                return None
            trail.append((node, bit))
            node = child
        if peer not in node.routes:
            return None
        before = {r.origin for r in node.routes.values()}
        del node.routes[peer]
        after = {r.origin for r in node.routes.values()}
        if not node.routes:
            self._count -= 1
            # prune empty leaves back up towards the root
            while trail and not node.routes and node.children == [None, None]:
                parent, bit = trail.pop()
                parent.children[bit] = None
                node = parent
        return before != after

    def routes_at(self, prefix: Prefix) -> dict[int, PeerRoute]:
        node = self._find(prefix)
        return dict(node.routes) if node is not None else {}

    def origins(self, prefix: Prefix) -> set[int]:
        node = self._find(prefix)
        return {r.origin for r in node.routes.values()} if node is not None else set()

    def origin_records(self, prefix: Prefix) -> dict[int, OriginRecord]:
        grouped: dict[int, list[PeerRoute]] = defaultdict(list)
        for r in self.routes_at(prefix).values():
            grouped[r.origin].append(r)
        return {
            o: OriginRecord(
                min(r.first_seen for r in rs),
                max(r.last_seen for r in rs),
                frozenset(r.path for r in rs),
            )
            for o, rs in grouped.items()
        }

    def covering(self, prefix: Prefix, *, strict: bool = False) -> Iterator[tuple[Prefix, dict[int, PeerRoute]]]:
        """Announced prefixes that cover ``prefix``, least specific first."""
        node: _Node | None = self._root
        depth = 0
        while node is not None and depth <= prefix.length:
            if node.routes and not (strict and depth == prefix.length):
                yield prefix.supernet(depth), node.routes
            if depth == prefix.length:
                break
            node = node.children[prefix.bit(depth)]
            depth += 1

    def origins_covering(self, prefix: Prefix) -> set[int]:
        return {r.origin for _, routes in self.covering(prefix) for r in routes.values()}

    def subtree(self, prefix: Prefix, *, strict: bool = False) -> Iterator[tuple[Prefix, dict[int, PeerRoute]]]:
        """Announced prefixes inside ``prefix`` in pre-order."""
        start = self._find(prefix)
        if start is None:
            return
        stack: list[tuple[_Node, Prefix]] = [(start, prefix)]
        while stack:
            node, p = stack.pop()
            if node.routes and not (strict and p == prefix):
                yield p, node.routes
            for bit in (1, 0):
                child = node.children[bit]
                if child is not None:
                    stack.append((child, Prefix(p.base | (bit << (31 - p.length)), p.length + 1)))

    def items(self) -> Iterator[tuple[Prefix, dict[int, PeerRoute]]]:
        return self.subtree(Prefix(0, 0))

    def routes(self) -> Iterator[Route]:
        for p, routes in self.items():
            for r in routes.values():
                yield Route(r.path, p, r.raw_path)

    def rib_view(self) -> RibView:
        return RibView.of(self.routes())

    def state(self) -> tuple:
        """Canonical, comparable rendering of the whole tree."""
        return tuple(
            (p, tuple(sorted((peer, r.raw_path, r.first_seen, r.last_seen) for peer, r in routes.items())))
            for p, routes in sorted(self.items())
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PrefixTree):
            return NotImplemented
        return self.state() == other.state()

    def copy(self) -> "PrefixTree":
        return copy.deepcopy(self)


def load_table_dump(records: Iterable[BgpUpdate], diagnostics: list[str] | None = None) -> PrefixTree:
    """Build a tree from a full table export (announcements only)."""
    tree = PrefixTree()
    for rec in records:
        if rec.kind is not UpdateKind.ANNOUNCE:
            msg = f"table dump record for {rec.prefix} is not an announcement"
            if diagnostics is not None:
                diagnostics.append(msg)
            else:
                log.warning(msg)
            continue
        tree.announce(rec.prefix, rec.peer, rec.path, rec.timestamp)
    return tree


# -- events -------------------------------------------------------------------


class EventKey(NamedTuple):
    victim_as: int
    victim_prefix: Prefix
    attacker_as: int
    attacker_subprefix: Prefix

    def __str__(self) -> str:
        return f"AS{self.victim_as} {self.victim_prefix} <- AS{self.attacker_as} {self.attacker_subprefix}"


@dataclass(frozen=True)
class SubMoasEvent:
    victim_as: int
    victim_prefix: Prefix
    attacker_as: int
    attacker_subprefix: Prefix
    first_seen: int
    last_seen: int
    occurrence_count: int = 1
    closed: bool = False

    def __post_init__(self) -> None:
        if not is_subprefix(self.attacker_subprefix, self.victim_prefix):
            raise ValueError(f"{self.attacker_subprefix} is not a subprefix of {self.victim_prefix}")
        if self.occurrence_count < 1:
            raise ValueError("occurrence_count must be >= 1")

    @property
    def key(self) -> EventKey:
        return EventKey(self.victim_as, self.victim_prefix, self.attacker_as, self.attacker_subprefix)

    @classmethod
    def from_key(cls, key: EventKey, first_seen: int, last_seen: int | None = None) -> "SubMoasEvent":
        return cls(*key, first_seen, first_seen if last_seen is None else last_seen)


def _pair_events(tree: PrefixTree, q: Prefix, q_routes, sub: Prefix, sub_routes) -> Iterator[EventKey]:
    victims = {r.origin for r in q_routes.values()}
    sub_origins = {r.origin for r in sub_routes.values()}
    if victims & sub_origins:
        # the covering-prefix owner also announces the subprefix: not strict
        victims = victims - sub_origins
        if not victims:
            return
    covering = tree.origins_covering(q)
    for attacker in sorted(sub_origins - covering):
        for victim in sorted(victims):
            yield EventKey(victim, q, attacker, sub)


def strict_submoas_keys(tree: PrefixTree, region: Prefix | None = None) -> set[EventKey]:
    """Currently active strict subMOAS tuples.

    A tuple (v, q, a, p') is active when q is announced by v, the more specific
    p' is announced by a, a originates neither q nor anything covering q, and v
    does not announce p' itself.  With ``region`` set, only tuples whose
    status can change when ``region`` changes are computed.
    """
    out: set[EventKey] = set()
    if region is None:
        tops = list(tree.items())
    else:
        own = tree.routes_at(region)
        if own:
            for q, q_routes in tree.covering(region, strict=True):
                out.update(_pair_events(tree, q, q_routes, region, own))
        tops = list(tree.subtree(region))
    for q, q_routes in tops:
        for sub, sub_routes in tree.subtree(q, strict=True):
            out.update(_pair_events(tree, q, q_routes, sub, sub_routes))
    return out


def _in_region(key: EventKey, region: Prefix) -> bool:
    if key.attacker_subprefix == region and is_subprefix(region, key.victim_prefix):
        return True
    return region.covers(key.victim_prefix)


def dedupe_events(events: Iterable[SubMoasEvent]) -> list[SubMoasEvent]:
    """Merge recurrences of the same 4-tuple, in order of first appearance."""
    merged: dict[EventKey, SubMoasEvent] = {}
    for e in events:
        seen = merged.get(e.key)
        if seen is None:
            merged[e.key] = e
        else:
            merged[e.key] = replace(
                seen,
                first_seen=min(seen.first_seen, e.first_seen),
                last_seen=max(seen.last_seen, e.last_seen),
                occurrence_count=seen.occurrence_count + e.occurrence_count,
                closed=seen.closed and e.closed,
            )
    return list(merged.values())


@dataclass(frozen=True)
class RecurrenceStats:
    distinct: int
    occurrences: int
    mean: float
    max: int


def recurrence_stats(events: Iterable[SubMoasEvent]) -> RecurrenceStats:
    counts = [e.occurrence_count for e in dedupe_events(events)]
    if not counts:
        return RecurrenceStats(0, 0, 0.0, 0)
    return RecurrenceStats(len(counts), sum(counts), sum(counts) / len(counts), max(counts))


# -- journal ------------------------------------------------------------------


class Journal:
    """Bounded history of origin changes and event open/close transitions.

    Coverage runs from ``start`` to ``end`` in feed time.  Entries older than
    ``retention`` seconds before ``end`` are folded into a base state.
    """

    def __init__(self, retention: float | None = DEFAULT_RETENTION, start: int | None = None, end: int | None = None):
        self.retention = retention
        self.start = start
        self.end = end if end is not None else start
        self._base_open: set[EventKey] = set()
        self._transitions: dict[EventKey, list[tuple[int, bool]]] = defaultdict(list)
        self._origin_changes: dict[Prefix, list[int]] = defaultdict(list)

    def _touch(self, ts: int) -> None:
        if self.start is None:
            self.start = ts
        if self.end is None or ts > self.end:
            self.end = ts

    def extend_to(self, ts: int) -> None:
        """Declare the feed complete up to ``ts``."""
        self._touch(ts)
        self._trim()

    def record_origin_change(self, ts: int, prefix: Prefix) -> None:
        self._touch(ts)
        self._origin_changes[prefix].append(ts)
        self._trim()

    def record_open(self, ts: int, key: EventKey) -> None:
        self._touch(ts)
        self._transitions[key].append((ts, True))

    def record_close(self, ts: int, key: EventKey) -> None:
        self._touch(ts)
        self._transitions[key].append((ts, False))

    def mark_open_at_start(self, key: EventKey) -> None:
        self._base_open.add(key)

    def _trim(self) -> None:
        if self.retention is None or self.end is None or self.start is None:
            return
        cutoff = self.end - self.retention
        if cutoff <= self.start:
            return
        self.start = cutoff
        for key in list(self._transitions):
            trans = self._transitions[key]
            keep = [t for t in trans if t[0] >= cutoff]
            for ts, opened in trans[: len(trans) - len(keep)]:
                if opened:
                    self._base_open.add(key)
                else:
                    self._base_open.discard(key)
            if keep:
                self._transitions[key] = keep
            else:
                del self._transitions[key]
        for p in list(self._origin_changes):
            kept = [t for t in self._origin_changes[p] if t >= cutoff]
            if kept:
                self._origin_changes[p] = kept
            else:
                del self._origin_changes[p]

    def covers(self, t0: float, t1: float) -> bool:
        return self.start is not None and self.start <= t0 <= t1 <= self.end

    def require(self, t0: float, t1: float) -> None:
        if t0 > t1:
            raise ValueError("interval start after end")
        if not self.covers(t0, t1):
            raise JournalCoverageError(f"interval [{t0}, {t1}] outside journal coverage [{self.start}, {self.end}]")

    def is_open_at(self, key: EventKey, t: float) -> bool:
        state = key in self._base_open
        for ts, opened in self._transitions.get(key, ()):
            if ts > t:
                break
            state = opened
        return state

    def transitions(self, key: EventKey, t0: float, t1: float) -> list[tuple[int, bool]]:
        """Open/close transitions of ``key`` strictly after ``t0`` and up to ``t1``."""
        return [(ts, o) for ts, o in self._transitions.get(key, ()) if t0 < ts <= t1]

    def origin_changed(self, prefix: Prefix, t0: float, t1: float) -> bool:
        return any(t0 < ts <= t1 for ts in self._origin_changes.get(prefix, ()))

    def keys(self) -> set[EventKey]:
        return set(self._base_open) | set(self._transitions)

    def active_at(self, t: float) -> set[EventKey]:
        return {k for k in self.keys() if self.is_open_at(k, t)}

    def ever_active_between(self, t0: float, t1: float) -> set[EventKey]:
        """Keys open at some instant of ``[t0, t1]``."""
        return {k for k in self.keys() if self.is_open_at(k, t0) or any(o for _, o in self.transitions(k, t0, t1))}


def event_stable_during(journal: Journal, event: SubMoasEvent | EventKey, interval: tuple[float, float]) -> bool:
    """True iff the event held continuously over ``interval``.

    Raises JournalCoverageError when the journal cannot answer; the caller
    must then discard whatever was measured in that interval.
    """
    t0, t1 = interval
    journal.require(t0, t1)
    key = event.key if isinstance(event, SubMoasEvent) else event
    if not journal.is_open_at(key, t0):
        return False
    if journal.transitions(key, t0, t1):
        return False
    return not (
        journal.origin_changed(key.victim_prefix, t0, t1) or journal.origin_changed(key.attacker_subprefix, t0, t1)
    )


# -- engine -------------------------------------------------------------------


@dataclass
class UpdateResult:
    opened: list[SubMoasEvent] = field(default_factory=list)
    closed: list[EventKey] = field(default_factory=list)


class RibEngine:
    """Single-writer replay engine: prefix tree, journal and event bookkeeping."""

    def __init__(self, retention: float | None = DEFAULT_RETENTION):
        self.tree = PrefixTree()
        self.journal = Journal(retention)
        self.open: dict[EventKey, SubMoasEvent] = {}
        self.history: list[SubMoasEvent] = []
        self.diagnostics: list[str] = []
        self.errors = 0

    def load_table_dump(self, records: Iterable[BgpUpdate]) -> int:
        """Load a table export as baseline; returns the number of skipped records.

        Conflicts already present in the dump are recorded as open at the
        start of the journal but are not reported as new events.
        """
        before = len(self.diagnostics)
        records = list(records)
        self.tree = load_table_dump(records, self.diagnostics)
        skipped = len(self.diagnostics) - before
        self.errors += skipped
        export_time = max((r.timestamp for r in records), default=None)
        if export_time is not None:
            self.journal = Journal(self.journal.retention, start=export_time)
        for key in strict_submoas_keys(self.tree):
            ev = SubMoasEvent.from_key(key, export_time or 0)
            self.open[key] = ev
            self.journal.mark_open_at_start(key)
        return skipped

    def apply_update(self, u: BgpUpdate) -> UpdateResult:
        result = UpdateResult()
        if self.journal.end is not None and u.timestamp < self.journal.end:
            self._diag(f"out-of-order update at {u.timestamp} (journal at {self.journal.end}) skipped")
            return result
        if u.kind is UpdateKind.ANNOUNCE:
            changed = self.tree.announce(u.prefix, u.peer, u.path, u.timestamp)
        else:
            changed = self.tree.withdraw(u.prefix, u.peer)
            if changed is None:
                self._diag(f"withdrawal of unknown route {u.prefix} from AS{u.peer}")
                self.journal.extend_to(u.timestamp)
                return result
        if not changed:
            self.journal.extend_to(u.timestamp)
            return result
        self.journal.record_origin_change(u.timestamp, u.prefix)

        now_active = strict_submoas_keys(self.tree, u.prefix)
        for key in sorted(k for k in self.open if _in_region(k, u.prefix) and k not in now_active):
            ev = self.open.pop(key)
            self._finish(ev, u.timestamp)
            self.journal.record_close(u.timestamp, key)
            result.closed.append(key)
        for key in sorted(now_active - self.open.keys()):
            ev = SubMoasEvent.from_key(key, u.timestamp)
            self.open[key] = ev
            self.journal.record_open(u.timestamp, key)
            result.opened.append(ev)
        return result

    def replay(self, updates: Iterable[BgpUpdate]) -> UpdateResult:
        total = UpdateResult()
        for u in updates:
            r = self.apply_update(u)
            total.opened.extend(r.opened)
            total.closed.extend(r.closed)
        return total

    def _finish(self, ev: SubMoasEvent, ts: int) -> None:
        self.history.append(replace(ev, last_seen=ts, closed=True))

    def _diag(self, msg: str) -> None:
        self.errors += 1
        self.diagnostics.append(msg)
        log.info(msg)

    def open_events(self) -> list[SubMoasEvent]:
        return [self.open[k] for k in sorted(self.open)]

    def events(self) -> list[SubMoasEvent]:
        """Every occurrence seen so far; still-open ones run to the journal end."""
        end = self.journal.end
        live = [replace(e, last_seen=max(e.first_seen, end or e.first_seen)) for e in self.open_events()]
        return sorted(self.history + live, key=lambda e: (e.first_seen, e.key))

    def occurrence_at(self, key: EventKey, t: float) -> SubMoasEvent | None:
        """The occurrence of ``key`` open at time ``t``, else the latest one before it."""
        best = None
        for ev in self.events():
            if ev.key != key or ev.first_seen > t:
                continue
            if best is None or ev.first_seen >= best.first_seen:
                best = ev
        return best

    def snapshot(self) -> PrefixTree:
        return self.tree.copy()


def diff_snapshots(old: Iterable[BgpUpdate], new: Iterable[BgpUpdate], ts: int) -> list[BgpUpdate]:
    """Turn two consecutive table exports into an update feed stamped ``ts``."""
    before = {(u.peer, u.prefix): u.path for u in old if u.kind is UpdateKind.ANNOUNCE}
    after = {(u.peer, u.prefix): u.path for u in new if u.kind is UpdateKind.ANNOUNCE}
    out = [withdraw(ts, prefix, peer) for (peer, prefix) in sorted(before.keys() - after.keys(), key=lambda k: (k[1], k[0]))]
    for (peer, prefix), path in sorted(after.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if before.get((peer, prefix)) != path:
            out.append(BgpUpdate(ts, UpdateKind.ANNOUNCE, prefix, peer, path))
    return out
