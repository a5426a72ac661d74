"""Optional MRT ingestion (TABLE_DUMP_V2 and BGP4MP) via ``mrtparse``.

Only IPv4 unicast is read.  Routes whose AS path contains an AS_SET are
skipped with a diagnostic, matching the text feed parser.
"""

from __future__ import annotations

from pathlib import Path
from typing import IO, Any, Iterator

from .model import Prefix
from .rib import BgpUpdate, FeedError, UpdateKind

TABLE_DUMP_V2 = 13
BGP4MP = 16
BGP4MP_ET = 17
RIB_IPV4_UNICAST = 2
PEER_INDEX_TABLE = 1
BGP4MP_MESSAGE_SUBTYPES = {1, 4, 6, 7}  # MESSAGE, MESSAGE_AS4 and their _LOCAL forms
BGP_UPDATE = 2
ATTR_AS_PATH = 2
ATTR_AS4_PATH = 17
SEG_AS_SEQUENCE = 2


def _code(field: Any) -> int:
    # mrtparse encodes enumerations as {code: name}
    if isinstance(field, dict):
        return next(iter(field))
    if isinstance(field, (list, tuple)):
        return field[0]
    return int(field)


def _segments(attrs: list[dict], attr_type: int) -> list[dict] | None:
    for a in attrs:
        if _code(a["type"]) == attr_type:
            return a["value"]
    return None


def _flatten(segments: list[dict]) -> list[int]:
    out: list[int] = []
    for seg in segments:
        if _code(seg["type"]) != SEG_AS_SEQUENCE:
            raise FeedError("AS path contains an AS_SET or confederation segment")
        out.extend(int(x) for x in seg["value"])
    return out


def _as_path(attrs: list[dict]) -> tuple[int, ...]:
    segs = _segments(attrs, ATTR_AS_PATH)
    if segs is None:
        raise FeedError("route without AS_PATH")
    path = _flatten(segs)
    segs4 = _segments(attrs, ATTR_AS4_PATH)
    if segs4 is not None:
        path4 = _flatten(segs4)
        if len(path4) <= len(path):
            path = path[: len(path) - len(path4)] + path4
    return tuple(path)


def _prefix(addr: str, length: int) -> Prefix:
    return Prefix.parse(f"{addr}/{length}")


def iter_mrt(source: str | Path | IO[bytes], diagnostics: list[str] | None = None) -> Iterator[BgpUpdate]:
    """Yield feed updates from an MRT file; table-dump entries become announcements."""
    import mrtparse

    diag = diagnostics if diagnostics is not None else []
    reader = mrtparse.Reader(str(source) if isinstance(source, Path) else source)
    peers: list[int] = []
    for n, entry in enumerate(reader, 1):
        if entry.err:
            diag.append(f"record {n}: {entry.err_msg}")
            continue
        d = entry.data
        mtype, subtype, ts = _code(d["type"]), _code(d["subtype"]), _code(d["timestamp"])
        try:
            if mtype == TABLE_DUMP_V2 and subtype == PEER_INDEX_TABLE:
                peers = [int(p["peer_as"]) for p in d["peer_entries"]]
            elif mtype == TABLE_DUMP_V2 and subtype == RIB_IPV4_UNICAST:
                prefix = _prefix(d["prefix"], d["length"])
                for rib in d["rib_entries"]:
                    try:
                        peer = peers[rib["peer_index"]]
                        yield BgpUpdate(ts, UpdateKind.ANNOUNCE, prefix, peer, _as_path(rib["path_attributes"]))
                    except (FeedError, IndexError, ValueError) as exc:
                        diag.append(f"record {n} {prefix}: {exc}")
            elif mtype in (BGP4MP, BGP4MP_ET) and subtype in BGP4MP_MESSAGE_SUBTYPES:
                msg = d["bgp_message"]
                if _code(msg["type"]) != BGP_UPDATE:
                    continue
                peer = int(d["peer_as"])
                for w in msg.get("withdrawn_routes", []):
                    yield BgpUpdate(ts, UpdateKind.WITHDRAW, _prefix(w["prefix"], w["length"]), peer)
                nlri = msg.get("nlri", [])
                if nlri:
                    path = _as_path(msg["path_attributes"])
                    for a in nlri:
                        yield BgpUpdate(ts, UpdateKind.ANNOUNCE, _prefix(a["prefix"], a["length"]), peer, path)
        except (FeedError, KeyError, ValueError) as exc:
            diag.append(f"record {n}: {exc}")
