"""Downstream reasoning over observed AS paths.

An attacker is unlikely to hijack its own upstream: its forged updates would
have to pass through the victim.  If some path shows the victim closer to the
observer than the suspected attacker, the anomaly is treated as benign.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

from .model import collapse_path
from .rib import PrefixTree
from .verdict import FilterVerdict


@dataclass(frozen=True)
class PathSet:
    paths: frozenset[tuple[int, ...]]
    source: str = ""

    @classmethod
    def of(cls, paths: Iterable[Iterable[int]], source: str = "") -> "PathSet":
        return cls(frozenset(p for p in (collapse_path(x) for x in paths) if p), source)

    def __len__(self) -> int:
        return len(self.paths)


def collect_paths(tree: PrefixTree | None, event: Any, source: str = "") -> PathSet:
    """Paths towards the victim prefix, the attacker subprefix, or anything covering either."""
    if tree is None:
        return PathSet(frozenset(), source)
    found: set[tuple[int, ...]] = set()
    for target in (event.victim_prefix, event.attacker_subprefix):
        for _, routes in tree.covering(target):
            found.update(r.path for r in routes.values())
    return PathSet.of(found, source)


def _downstream(path: tuple[int, ...], victim: int, attacker: int) -> bool:
    v_idx = [i for i, a in enumerate(path) if a == victim]
    a_idx = [i for i, a in enumerate(path) if a == attacker]
    # every occurrence of the victim must precede every occurrence of the attacker
    return bool(v_idx) and bool(a_idx) and max(v_idx) < min(a_idx)


def topology_filter(ps: PathSet, victim: int, attacker: int) -> FilterVerdict:
    if victim == attacker:
        raise ValueError("victim and attacker are the same AS; not a conflict")
    if not ps.paths:
        return FilterVerdict.not_covered(reason="no paths towards the affected prefixes")
    both = sorted(p for p in ps.paths if victim in p and attacker in p)
    for path in both:
        if _downstream(path, victim, attacker):
            return FilterVerdict.legit(witness=list(path))
    evidence: dict[str, Any] = {"paths": len(ps.paths)}
    if both:
        evidence["reason"] = "attacker not downstream of victim"
        evidence["paths_with_both"] = [list(p) for p in both]
        if any(p.count(victim) > 1 for p in both):
            evidence["repeated_victim"] = True
    else:
        evidence["reason"] = "no path contains both ASes"
    return FilterVerdict.inconclusive(**evidence)
