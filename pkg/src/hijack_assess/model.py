"""Set-based model of interdomain routing.

A routing table is a set of routes, each an AS path (observer first, origin
last) paired with an IPv4 prefix.  Everything here is an immutable value; the
query functions never mutate their inputs.
"""

from __future__ import annotations

import enum
import ipaddress
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MAX_ASN = 2**32 - 1


def check_asn(value: int) -> int:
    """Validate a 32-bit AS number and return it as ``int``."""
    asn = int(value)
    if not 0 < asn <= MAX_ASN:
        raise ValueError(f"AS number out of range: {value}")
    return asn


def parse_asn(text: str) -> int:
    """Parse ``64500`` or ``AS64500`` (case-insensitive)."""
    text = text.strip()
    if text[:2].upper() == "AS":
        text = text[2:]
    if not text.isdigit():
        raise ValueError(f"not an AS number: {text!r}")
    return check_asn(int(text))


@dataclass(frozen=True, order=True)
class Prefix:
    base: int
    length: int

    def __post_init__(self) -> None:
        if not 0 <= self.length <= 32:
            raise ValueError(f"prefix length out of range: {self.length}")
        if not 0 <= self.base <= 0xFFFFFFFF:
            raise ValueError(f"address out of range: {self.base}")
        if self.base & self.host_mask:
            raise ValueError(f"host bits set in {ipaddress.IPv4Address(self.base)}/{self.length}")

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        if "/" not in text:
            raise ValueError(f"invalid IPv4 prefix {text!r}: missing length")
        try:
            net = ipaddress.IPv4Network(text.strip(), strict=True)
        except ValueError as exc:
            raise ValueError(f"invalid IPv4 prefix {text!r}: {exc}") from None
        return cls(int(net.network_address), net.prefixlen)

    @property
    def host_mask(self) -> int:
        return (1 << (32 - self.length)) - 1

    @property
    def first(self) -> int:
        return self.base

    @property
    def last(self) -> int:
        return self.base | self.host_mask

    def bit(self, depth: int) -> int:
        """Bit ``depth`` (0 = most significant) of the base address."""
        return (self.base >> (31 - depth)) & 1

    def contains_address(self, address: int) -> bool:
        return self.first <= address <= self.last

    def covers(self, other: "Prefix") -> bool:
        """True if ``other`` equals this prefix or lies inside it."""
        return self.length <= other.length and other.base & ~self.host_mask & 0xFFFFFFFF == self.base

    def supernet(self, length: int) -> "Prefix":
        if length > self.length:
            raise ValueError("supernet length must not exceed prefix length")
        mask = (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF if length else 0
        return Prefix(self.base & mask, length)

    def split(self, depth: int) -> list["Prefix"]:
        """All ``2**depth`` subprefixes that are ``depth`` bits longer."""
        if depth < 0 or self.length + depth > 32:
            raise ValueError(f"cannot split /{self.length} by {depth} bits")
        step = 1 << (32 - self.length - depth)
        return [Prefix(self.base + i * step, self.length + depth) for i in range(1 << depth)]

    def __str__(self) -> str:
        return f"{ipaddress.IPv4Address(self.base)}/{self.length}"

    def __repr__(self) -> str:
        return f"Prefix('{self}')"


def is_subprefix(child: Prefix, parent: Prefix) -> bool:
    """Strict containment: ``child`` is a more specific prefix of ``parent``."""
    return child.length > parent.length and parent.covers(child)


def collapse_path(path: Iterable[int]) -> tuple[int, ...]:
    """Drop consecutive repeats (AS path prepending)."""
    out: list[int] = []
    for asn in path:
        if not out or out[-1] != asn:
            out.append(asn)
    return tuple(out)


@dataclass(frozen=True)
class Route:
    """An AS path towards a prefix.

    ``path`` is stored with prepending collapsed; the path as received is kept
    in ``raw_path`` for display and does not take part in equality.
    """

    path: tuple[int, ...]
    prefix: Prefix
    raw_path: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        raw = tuple(check_asn(a) for a in self.path)
        if not raw:
            raise ValueError("route path must not be empty")
        object.__setattr__(self, "raw_path", tuple(self.raw_path) or raw)
        object.__setattr__(self, "path", collapse_path(raw))

    @property
    def origin(self) -> int:
        return self.path[-1]

    @property
    def upstream(self) -> int | None:
        return self.path[-2] if len(self.path) >= 2 else None

    def __len__(self) -> int:
        return len(self.path)

    def __str__(self) -> str:
        return " ".join(map(str, self.path)) + f" << {self.prefix}"


@dataclass(frozen=True)
class RibView:
    """A finite set of active routes, optionally tagged with its observer AS."""

    routes: frozenset[Route] = frozenset()
    observer: int | None = None

    @classmethod
    def of(cls, routes: Iterable[Route], observer: int | None = None) -> "RibView":
        return cls(frozenset(routes), observer)

    def merged(self, extra: Iterable[Route]) -> "RibView":
        return RibView(self.routes | frozenset(extra), self.observer)

    def prefixes(self) -> set[Prefix]:
        return {r.prefix for r in self.routes}

    def __iter__(self):
        return iter(self.routes)

    def __len__(self) -> int:
        return len(self.routes)


class ConflictClass(enum.Enum):
    NO_CONFLICT = "NoConflict"
    MOAS = "Moas"
    SUB_MOAS = "SubMoas"
    STRICT_SUB_MOAS = "StrictSubMoas"


@dataclass(frozen=True)
class ImpactReport:
    unrivaled: bool
    globally_shortest: bool
    most_specific: bool


def origins(rib: RibView, p: Prefix) -> set[int]:
    return {r.origin for r in rib.routes if r.prefix == p}


def covering_routes(rib: RibView, p: Prefix) -> set[Route]:
    """Routes to ``p`` itself or to any less specific prefix covering it."""
    return {r for r in rib.routes if r.prefix.covers(p)}


def origins_covering(rib: RibView, p: Prefix) -> set[int]:
    return {r.origin for r in covering_routes(rib, p)}


def upstreams(rib: RibView, o: int) -> set[int]:
    return {r.path[-2] for r in rib.routes if r.origin == o and len(r.path) >= 2}


def classify_conflict(rib: RibView, candidate: Route) -> ConflictClass:
    """Classify the conflict ``candidate`` would create if added to ``rib``.

    The most severe class wins: StrictSubMoas > SubMoas > Moas.  A subMOAS is
    strict when some origin of the covering prefix does not itself announce
    the candidate prefix, the same rule the replay engine uses for events.
    """
    p = candidate.prefix
    origin = candidate.origin
    exact = origins(rib, p)

    sub_moas = strict = False
    for q in rib.prefixes():
        if not is_subprefix(p, q):
            continue
        victims = origins(rib, q)
        if victims and origin not in origins_covering(rib, q):
            sub_moas = True
            if victims - exact:
                strict = True
                break

    if strict:
        return ConflictClass.STRICT_SUB_MOAS
    if sub_moas:
        return ConflictClass.SUB_MOAS
    if exact and origin not in exact:
        return ConflictClass.MOAS
    return ConflictClass.NO_CONFLICT


def _single_target(forged: Iterable[Route]) -> tuple[list[Route], Prefix]:
    routes = list(forged)
    if not routes:
        raise ValueError("forged route set is empty")
    targets = {r.prefix for r in routes}
    if len(targets) != 1:
        raise ValueError(f"forged routes span {len(targets)} prefixes; expected one")
    return routes, targets.pop()


def impact_conditions(rib: RibView, forged: Iterable[Route]) -> ImpactReport:
    """Evaluate the three success conditions for forged routes to one prefix."""
    routes, target = _single_target(forged)
    competing = covering_routes(rib, target)
    unrivaled = not competing
    shortest = all(len(f) < len(r) for f in routes for r in competing)
    most_specific = not any(target.covers(r.prefix) for r in rib.routes)
    return ImpactReport(unrivaled=unrivaled, globally_shortest=shortest, most_specific=most_specific)


def _forge(
    attacker: int,
    attacker_upstreams: Iterable[int],
    prefix: Prefix,
    observer_subpaths: Iterable[Sequence[int]],
) -> set[Route]:
    ups = sorted(set(attacker_upstreams))
    if not ups:
        raise ValueError("attacker needs at least one upstream")
    subpaths = [tuple(w) for w in observer_subpaths] or [()]
    return {Route(w + (u, attacker), prefix) for w, u in itertools.product(subpaths, ups)}


def inject_prefix_hijack(
    rib: RibView,
    attacker: int,
    attacker_upstreams: Iterable[int],
    victim_prefix: Prefix,
    observer_subpaths: Iterable[Sequence[int]] = (),
) -> frozenset[Route]:
    """Forged routes originating the victim's exact prefix at ``attacker``.

    ``rib`` is left untouched; callers merge the result themselves.
    """
    return frozenset(_forge(attacker, attacker_upstreams, victim_prefix, observer_subpaths))


def inject_subprefix_hijack(
    rib: RibView,
    attacker: int,
    attacker_upstreams: Iterable[int],
    victim_prefix: Prefix,
    split_depth: int,
    observer_subpaths: Iterable[Sequence[int]] = (),
) -> frozenset[Route]:
    """Forged routes for every subprefix ``split_depth`` bits longer.

    Together the forged prefixes cover exactly the victim's address range.
    """
    if split_depth < 1:
        raise ValueError("split_depth must be at least 1")
    subpaths = [tuple(w) for w in observer_subpaths]
    out: set[Route] = set()
    for sub in victim_prefix.split(split_depth):
        out |= _forge(attacker, attacker_upstreams, sub, subpaths)
    return frozenset(out)


@dataclass(frozen=True)
class BoundViolation:
    prefix: Prefix
    routes: int
    bound: int


def check_best_path_bound(observed: RibView, global_rib: RibView, observer: int | None = None) -> list[BoundViolation]:
    """Flag prefixes for which one observer holds more routes than it has neighbours."""
    s = observer if observer is not None else observed.observer
    if s is None:
        raise ValueError("observer AS required")
    bound = len(upstreams(global_rib, s))
    counts: dict[Prefix, int] = {}
    for r in observed.routes:
        counts[r.prefix] = counts.get(r.prefix, 0) + 1
    return [BoundViolation(p, n, bound) for p, n in sorted(counts.items()) if n > bound]
