"""RPSL snapshot parsing and the registry relationship graph.

Objects of five classes are kept (mntner, organisation, aut-num, inetnum,
route) and linked by maintained_by, org, origin, import and the derived
maps_to relation.  Queries search for short chains of such relations between
the parties of an alarm.
"""

from __future__ import annotations

import bisect
import csv
import enum
import gzip
import ipaddress
import logging
import re
import threading
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, NamedTuple

from .model import Prefix, parse_asn
from .verdict import FilterVerdict

log = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 4
_IMPORT_FROM = re.compile(r"\bfrom\s+AS(\d+)\b", re.IGNORECASE)
_ATTR = re.compile(r"^([A-Za-z0-9_-]+):(.*)$")


class ObjectKind(str, enum.Enum):
    MNTNER = "mntner"
    ORGANISATION = "organisation"
    AUT_NUM = "aut-num"
    INETNUM = "inetnum"
    ROUTE = "route"


class Relation(str, enum.Enum):
    MAINTAINED_BY = "maintained_by"
    ORG = "org"
    ORIGIN = "origin"
    IMPORT = "import"
    MAPS_TO = "maps_to"


# (source kinds or None for any, target kind)
EDGE_TYPES: dict[Relation, tuple[frozenset[ObjectKind] | None, ObjectKind]] = {
    Relation.MAINTAINED_BY: (None, ObjectKind.MNTNER),
    Relation.ORG: (None, ObjectKind.ORGANISATION),
    Relation.ORIGIN: (frozenset({ObjectKind.ROUTE}), ObjectKind.AUT_NUM),
    Relation.IMPORT: (frozenset({ObjectKind.AUT_NUM}), ObjectKind.AUT_NUM),
    Relation.MAPS_TO: (frozenset({ObjectKind.ROUTE}), ObjectKind.INETNUM),
}


class NodeRef(NamedTuple):
    kind: ObjectKind
    key: Any
    registry: str

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.kind.value, format_key(self.kind, self.key), self.registry)

    def __str__(self) -> str:
        return f"{self.kind.value.upper()} {format_key(self.kind, self.key)} ({self.registry})"


def format_key(kind: ObjectKind, key: Any) -> str:
    if kind is ObjectKind.AUT_NUM:
        return f"AS{key}"
    if kind is ObjectKind.INETNUM:
        return f"{ipaddress.IPv4Address(key[0])} - {ipaddress.IPv4Address(key[1])}"
    if kind is ObjectKind.ROUTE:
        return f"{key[0]} AS{key[1]}"
    return str(key)


@dataclass(frozen=True)
class IrrObject:
    kind: ObjectKind
    key: Any
    attributes: tuple[tuple[str, str], ...]
    source_registry: str

    @property
    def ref(self) -> NodeRef:
        return NodeRef(self.kind, self.key, self.source_registry)

    def values(self, name: str) -> list[str]:
        return [v for n, v in self.attributes if n == name]


@dataclass(frozen=True)
class IrrEdge:
    source: NodeRef
    relation: Relation
    target: NodeRef | None
    orphaned: bool = False
    target_key: str = ""

    def __post_init__(self) -> None:
        sources, target_kind = EDGE_TYPES[self.relation]
        if sources is not None and self.source.kind not in sources:
            raise ValueError(f"{self.relation.value} edge cannot start at {self.source.kind.value}")
        if self.orphaned:
            if self.target is not None:
                raise ValueError("orphaned edge must not carry a target")
        elif self.target is None or self.target.kind is not target_kind:
            raise ValueError(f"{self.relation.value} edge must end at {target_kind.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "from": str(self.source),
            "relation": self.relation.value,
            "to": str(self.target) if self.target is not None else self.target_key,
        }


@dataclass
class ParseResult:
    objects: list[IrrObject] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)


def _inetnum_key(value: str) -> tuple[int, int]:
    value = value.strip()
    if "/" in value:
        net = ipaddress.IPv4Network(value, strict=False)
        return int(net.network_address), int(net.broadcast_address)
    lo, sep, hi = value.partition("-")
    if not sep:
        raise ValueError(f"bad inetnum range {value!r}")
    start, end = int(ipaddress.IPv4Address(lo.strip())), int(ipaddress.IPv4Address(hi.strip()))
    if start > end:
        raise ValueError(f"inverted inetnum range {value!r}")
    return start, end


def _make_object(attrs: list[tuple[str, str]], registry: str | None) -> IrrObject | None:
    cls = attrs[0][0]
    kind = ObjectKind(cls)
    first = attrs[0][1]
    if kind is ObjectKind.AUT_NUM:
        key: Any = parse_asn(first)
    elif kind is ObjectKind.INETNUM:
        key = _inetnum_key(first)
    elif kind is ObjectKind.ROUTE:
        origins = [v for n, v in attrs if n == "origin"]
        if not origins:
            raise ValueError(f"route {first} lacks an origin attribute")
        key = (Prefix.parse(first), parse_asn(origins[0].split()[0]))
    else:
        if not first:
            raise ValueError(f"empty {cls} name")
        key = first.split()[0].upper()
    source = registry
    if source is None:
        sources = [v for n, v in attrs if n == "source"]
        source = sources[0].split()[0].upper() if sources else "UNKNOWN"
    return IrrObject(kind, key, tuple(attrs), source)


def _decode(snapshot: bytes | str | IO) -> str:
    if hasattr(snapshot, "read"):
        snapshot = snapshot.read()
    if isinstance(snapshot, bytes):
        if snapshot[:2] == b"\x1f\x8b":
            snapshot = gzip.decompress(snapshot)
        snapshot = snapshot.decode("utf-8", errors="replace")
    return snapshot


def parse_rpsl(snapshot: bytes | str | IO, registry: str | None = None) -> ParseResult:
    """Parse a paragraph-separated RPSL dump.

    Objects of unsupported classes are counted in ``skipped``.  A dump that
    stops in the middle of a line leaves its last object incomplete; that
    object is dropped with a diagnostic.
    """
    text = _decode(snapshot)
    result = ParseResult()
    lines = text.split("\n")
    truncated = bool(text) and not text.endswith("\n")

    attrs: list[tuple[str, str]] = []
    start_line = 0
    broken: str | None = None

    def flush(lineno: int) -> None:
        nonlocal attrs, broken
        if attrs:
            cls = attrs[0][0]
            if broken is not None:
                result.diagnostics.append(f"line {start_line}: {broken}; object dropped")
            elif cls not in ObjectKind._value2member_map_:
                result.skipped[cls] += 1
            else:
                try:
                    result.objects.append(_make_object(attrs, registry))
                except ValueError as exc:
                    result.diagnostics.append(f"line {start_line}: {cls}: {exc}")
        attrs = []
        broken = None

    for lineno, line in enumerate(lines, 1):
        if line.startswith(("#", "%")):
            continue
        if not line.strip():
            flush(lineno)
            continue
        if line[0] in " \t+":
            if not attrs:
                broken = "continuation line outside an object"
                start_line = lineno
                attrs = [("?", "")]
                continue
            name, value = attrs[-1]
            extra = line[1:].split("#", 1)[0].strip()
            attrs[-1] = (name, f"{value} {extra}".strip())
            continue
        m = _ATTR.match(line)
        if not m:
            if not attrs:
                start_line = lineno
                attrs = [("?", "")]
            broken = broken or f"malformed attribute line {lineno}"
            continue
        if not attrs:
            start_line = lineno
        attrs.append((m.group(1).lower(), m.group(2).split("#", 1)[0].strip()))

    if attrs:
        if truncated:
            result.diagnostics.append(f"line {start_line}: unterminated object at end of stream; object dropped")
        else:
            flush(len(lines))
    return result


def load_snapshot(path: str | Path, registry: str | None = None) -> ParseResult:
    """Read an RPSL file (plain or gzip) with the registry label defaulting to the file stem."""
    path = Path(path)
    label = registry
    if label is None:
        label = path.name.split(".")[0].upper()
    with open(path, "rb") as fh:
        return parse_rpsl(fh.read(), label)


def _split_refs(value: str) -> list[str]:
    return [t.upper() for t in re.split(r"[,\s]+", value) if t]


def edge_intents(obj: IrrObject) -> list[tuple[Relation, ObjectKind, Any]]:
    """Relations an object asks for, before target resolution."""
    out: list[tuple[Relation, ObjectKind, Any]] = []
    for value in obj.values("mnt-by"):
        out.extend((Relation.MAINTAINED_BY, ObjectKind.MNTNER, m) for m in _split_refs(value))
    for value in obj.values("org"):
        out.extend((Relation.ORG, ObjectKind.ORGANISATION, o) for o in _split_refs(value)[:1])
    if obj.kind is ObjectKind.ROUTE:
        out.append((Relation.ORIGIN, ObjectKind.AUT_NUM, obj.key[1]))
    if obj.kind is ObjectKind.AUT_NUM:
        for value in obj.values("import"):
            out.extend((Relation.IMPORT, ObjectKind.AUT_NUM, int(m)) for m in _IMPORT_FROM.findall(value))
    return out


@dataclass(frozen=True)
class LegitimizingPath:
    edges: tuple[IrrEdge, ...]
    start: NodeRef
    end: NodeRef

    def __len__(self) -> int:
        return len(self.edges)

    def nodes(self) -> list[NodeRef]:
        out = [self.start]
        for e in self.edges:
            out.append(e.target if e.source == out[-1] else e.source)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"start": str(self.start), "end": str(self.end), "edges": [e.to_dict() for e in self.edges]}


class IrrGraph:
    """Typed object graph; immutable once built apart from explicit ``add_*`` calls."""

    def __init__(self, tag: str | None = None):
        self.tag = tag
        self.nodes: dict[NodeRef, IrrObject | None] = {}
        self.edges: list[IrrEdge] = []
        self.diagnostics: list[str] = []
        self._adj: dict[NodeRef, list[tuple[IrrEdge, NodeRef]]] = defaultdict(list)
        self._aut_nums: dict[int, list[NodeRef]] = defaultdict(list)
        self._routes: dict[Prefix, list[NodeRef]] = defaultdict(list)
        self._inetnums: dict[str, list[tuple[int, int, NodeRef]]] = defaultdict(list)

    def __len__(self) -> int:
        return len(self.nodes)

    def is_stub(self, ref: NodeRef) -> bool:
        return ref in self.nodes and self.nodes[ref] is None

    def add_node(self, ref: NodeRef, obj: IrrObject | None = None) -> None:
        fresh = ref not in self.nodes
        if not fresh and obj is None:
            return
        self.nodes[ref] = obj
        if not fresh:
            return
        if ref.kind is ObjectKind.AUT_NUM:
            self._aut_nums[ref.key].append(ref)
        elif ref.kind is ObjectKind.ROUTE:
            self._routes[ref.key[0]].append(ref)
        elif ref.kind is ObjectKind.INETNUM:
            bisect.insort(self._inetnums[ref.registry], (ref.key[0], ref.key[1], ref))

    def add_edge(self, edge: IrrEdge) -> None:
        for end in (edge.source, edge.target):
            if end is not None and end not in self.nodes:
                raise KeyError(f"edge endpoint {end} not in graph")
        self.edges.append(edge)
        if edge.orphaned or edge.target == edge.source:
            return
        self._adj[edge.source].append((edge, edge.target))
        self._adj[edge.target].append((edge, edge.source))

    def neighbours(self, ref: NodeRef) -> list[tuple[IrrEdge, NodeRef]]:
        return sorted(self._adj.get(ref, ()), key=lambda en: (en[1].sort_key, en[0].relation.value))

    def aut_nums(self, asn: int) -> list[NodeRef]:
        return sorted(self._aut_nums.get(asn, ()), key=lambda r: r.registry)

    def routes_for(self, prefix: Prefix) -> list[NodeRef]:
        return sorted(self._routes.get(prefix, ()), key=lambda r: r.sort_key)

    def inetnums_containing(self, first: int, last: int) -> list[NodeRef]:
        """All INETNUMs whose range contains [first, last], most specific first."""
        found: list[tuple[int, int, NodeRef]] = []
        for registry, ranges in self._inetnums.items():
            hi = bisect.bisect_right(ranges, (first, float("inf")))
            found.extend(entry for entry in ranges[:hi] if entry[1] >= last)
        found.sort(key=lambda e: (e[1] - e[0], e[2].registry, e[0]))
        return [e[2] for e in found]

    def most_specific_inetnum(self, first: int, last: int, registry: str) -> NodeRef | None:
        for ref in self.inetnums_containing(first, last):
            if ref.registry == registry:
                return ref
        return None

    def orphaned_imports(self, asn: int) -> list[IrrEdge]:
        refs = set(self.aut_nums(asn))
        return [e for e in self.edges if e.orphaned and e.source in refs]

    def registries(self) -> list[str]:
        return sorted({r.registry for r in self.nodes})

    def export_csv(self, directory: str | Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nodes_path, edges_path = directory / "nodes.csv", directory / "edges.csv"
        with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "kind", "key", "registry", "stub"])
            for ref in sorted(self.nodes, key=lambda r: r.sort_key):
                w.writerow([str(ref), ref.kind.value, format_key(ref.kind, ref.key), ref.registry, int(self.is_stub(ref))])
        with open(edges_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "relation", "target", "orphaned"])
            for e in self.edges:
                w.writerow([str(e.source), e.relation.value, str(e.target) if e.target else e.target_key, int(e.orphaned)])
        return nodes_path, edges_path


def build_graph(objects: Iterable[IrrObject], tag: str | None = None) -> IrrGraph:
    """Resolve object references into a graph.

    References to maintainers and organisations without an object of their
    own become stub nodes; those identifiers are unique even when the dump
    strips the object details.  Route origins without an aut-num also get a
    stub.  Imports from unknown ASes are kept as orphaned edges.
    """
    g = IrrGraph(tag)
    latest: dict[NodeRef, IrrObject] = {}
    for obj in objects:
        if obj.ref in latest:
            g.diagnostics.append(f"duplicate {obj.ref}; keeping the later object")
        latest[obj.ref] = obj
    for ref, obj in latest.items():
        g.add_node(ref, obj)

    for obj in latest.values():
        for relation, kind, key in edge_intents(obj):
            target = NodeRef(kind, key, obj.source_registry)
            if target not in g.nodes:
                if relation is Relation.IMPORT:
                    g.add_edge(IrrEdge(obj.ref, relation, None, orphaned=True, target_key=format_key(kind, key)))
                    continue
                g.add_node(target)
            g.add_edge(IrrEdge(obj.ref, relation, target))

    for ref in [r for r in latest if r.kind is ObjectKind.ROUTE]:
        prefix = ref.key[0]
        inetnum = g.most_specific_inetnum(prefix.first, prefix.last, ref.registry)
        if inetnum is not None:
            g.add_edge(IrrEdge(ref, Relation.MAPS_TO, inetnum))
    return g


def graph_from_snapshots(results: Iterable[ParseResult], tag: str | None = None) -> IrrGraph:
    objects: list[IrrObject] = []
    for r in results:
        objects.extend(r.objects)
    return build_graph(objects, tag)


def _search(g: IrrGraph, sources: list[NodeRef], targets: set[NodeRef], max_depth: int) -> LegitimizingPath | None:
    """Breadth-first search over undirected legitimizing edges."""
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    parent: dict[NodeRef, tuple[NodeRef, IrrEdge] | None] = {}
    queue: deque[tuple[NodeRef, int]] = deque()
    for s in sources:
        if s in g.nodes and s not in parent:
            parent[s] = None
            queue.append((s, 0))
    while queue:
        node, depth = queue.popleft()
        if node in targets:
            edges: list[IrrEdge] = []
            cur = node
            while parent[cur] is not None:
                prev, edge = parent[cur]
                edges.append(edge)
                cur = prev
            edges.reverse()
            if edges and all(e.relation is Relation.MAPS_TO for e in edges):
                continue
            return LegitimizingPath(tuple(edges), cur, node)
        if depth == max_depth:
            continue
        for edge, other in g.neighbours(node):
            if other not in parent:
                parent[other] = (node, edge)
                queue.append((other, depth + 1))
    return None


def check_business_relation(g: IrrGraph, as1: int, as2: int, max_depth: int = DEFAULT_MAX_DEPTH) -> LegitimizingPath | None:
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    if as1 == as2:
        refs = g.aut_nums(as1)
        ref = refs[0] if refs else NodeRef(ObjectKind.AUT_NUM, as1, "")
        return LegitimizingPath((), ref, ref)
    return _search(g, g.aut_nums(as1), set(g.aut_nums(as2)), max_depth)


def holdership_anchors(g: IrrGraph, p: Prefix) -> list[NodeRef]:
    """Route objects for exactly ``p``, then INETNUMs containing it, most specific first."""
    return g.routes_for(p) + g.inetnums_containing(p.first, p.last)


def check_resource_holdership(g: IrrGraph, p: Prefix, a: int, max_depth: int = DEFAULT_MAX_DEPTH) -> LegitimizingPath | None:
    return _search(g, holdership_anchors(g, p), set(g.aut_nums(a)), max_depth)


def replay_path(g: IrrGraph, path: LegitimizingPath) -> bool:
    """Check that every edge of ``path`` exists in ``g`` and the walk is connected."""
    present = set(g.edges)
    cur = path.start
    for e in path.edges:
        if e not in present or e.orphaned:
            return False
        if e.source == cur:
            cur = e.target
        elif e.target == cur:
            cur = e.source
        else:
            return False
    return cur == path.end


def _registered(g: IrrGraph, prefixes: Iterable[Prefix], asns: Iterable[int]) -> bool:
    for p in prefixes:
        if g.routes_for(p) or g.inetnums_containing(p.first, p.last):
            return True
    return any(g.aut_nums(a) for a in asns)


def irr_filter(g: IrrGraph | None, event: Any, max_depth: int = DEFAULT_MAX_DEPTH) -> FilterVerdict:
    """Legitimize an event through registry relations, never concluding from absence.

    ``event`` needs victim_as, victim_prefix, attacker_as, attacker_subprefix.
    """
    if g is None:
        return FilterVerdict.not_covered(reason="no IRR data loaded")
    business = check_business_relation(g, event.attacker_as, event.victim_as, max_depth)
    if business is not None:
        return FilterVerdict.legit(query="business_relation", path=business.to_dict())
    holder = check_resource_holdership(g, event.attacker_subprefix, event.attacker_as, max_depth)
    if holder is not None:
        return FilterVerdict.legit(query="resource_holdership", path=holder.to_dict())
    if not _registered(g, (event.attacker_subprefix, event.victim_prefix), (event.attacker_as, event.victim_as)):
        return FilterVerdict.not_covered(reason="neither prefixes nor ASes registered")
    orphans = [e.to_dict() for a in (event.attacker_as, event.victim_as) for e in g.orphaned_imports(a)]
    evidence: dict[str, Any] = {"reason": "no legitimizing relation found"}
    if orphans:
        evidence["orphaned_imports"] = orphans
    return FilterVerdict.inconclusive(**evidence)


class SnapshotStore:
    """Tagged IRR graphs; a new build is swapped in atomically."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._graphs: dict[str, IrrGraph] = {}
        self._current: str | None = None

    def put(self, tag: str, graph: IrrGraph, make_current: bool = True) -> None:
        graph.tag = tag
        with self._lock:
            self._graphs[tag] = graph
            if make_current:
                self._current = tag

    def get(self, tag: str | None = None) -> IrrGraph | None:
        with self._lock:
            key = tag if tag is not None else self._current
            return self._graphs.get(key) if key is not None else None

    def tags(self) -> list[str]:
        with self._lock:
            return sorted(self._graphs)
