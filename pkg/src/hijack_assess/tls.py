"""SSL/TLS ground-truth keys and validation scans.

Hosts whose public key is known from a scan taken before an event are scanned
again while the event is live.  A host that still presents its key proves the
traffic reaches the legitimate operator, so the event is not an attack.
"""

from __future__ import annotations

import enum
import hashlib
import ipaddress
import random
import socket
import ssl
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

from .model import Prefix
from .rib import Journal, JournalCoverageError, event_stable_during
from .verdict import FilterVerdict

# implicit TLS ports, then STARTTLS ports
PROTOCOL_PORTS: dict[str, int] = {
    "https": 443,
    "smtps": 465,
    "imaps": 993,
    "pop3s": 995,
    "ftps": 990,
    "ldaps": 636,
    "xmpps-client": 5223,
    "xmpps-server": 5270,
    "ircs": 6697,
    "ftp-starttls": 21,
    "smtp-starttls": 25,
    "pop3-starttls": 110,
    "imap-starttls": 143,
    "submission-starttls": 587,
}
FINGERPRINT_SIZE = 32
DEFAULT_TARGET_TIMEOUT = 10.0
DEFAULT_SCAN_BUDGET = 15 * 60.0
DEFAULT_PARALLELISM = 8


def _addr(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def _fmt_addr(address: int) -> str:
    return str(ipaddress.IPv4Address(address))


def fingerprint_spki(spki_der: bytes) -> bytes:
    """Digest of a DER-encoded SubjectPublicKeyInfo."""
    return hashlib.sha256(spki_der).digest()


def fingerprint_certificate(cert_der: bytes) -> bytes:
    """Fingerprint of the public key inside a DER certificate (not of the certificate)."""
    from cryptography import x509
    from cryptography.hazmat.primitives import serialization

    cert = x509.load_der_x509_certificate(cert_der)
    spki = cert.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    return fingerprint_spki(spki)


@dataclass(frozen=True)
class KeyObservation:
    address: int
    port: int
    protocol: str
    key_fingerprint: bytes
    observed_at: float

    def __post_init__(self) -> None:
        if not 0 <= self.address <= 0xFFFFFFFF:
            raise ValueError(f"bad address {self.address}")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"bad port {self.port}")
        if self.protocol not in PROTOCOL_PORTS:
            raise ValueError(f"unknown protocol label {self.protocol!r}")
        if len(self.key_fingerprint) != FINGERPRINT_SIZE:
            raise ValueError(f"fingerprint must be {FINGERPRINT_SIZE} bytes")

    @classmethod
    def parse(cls, line: str) -> "KeyObservation":
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"expected 5 fields, got {len(fields)}")
        addr, port, proto, fp, ts = fields
        return cls(_addr(addr), int(port), proto.lower(), bytes.fromhex(fp), float(ts))

    def to_line(self) -> str:
        return f"{_fmt_addr(self.address)} {self.port} {self.protocol} {self.key_fingerprint.hex()} {self.observed_at:g}"


def read_observations(path: str | Path, diagnostics: list[str] | None = None) -> list[KeyObservation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(KeyObservation.parse(line))
            except ValueError as exc:
                if diagnostics is not None:
                    diagnostics.append(f"line {lineno}: {exc}")
    return out


@dataclass(frozen=True)
class GroundTruthEntry:
    fingerprint: bytes
    protocol: str
    observed_at: float


@dataclass(frozen=True)
class GroundTruth:
    entries: Mapping[tuple[int, int], GroundTruthEntry] = field(default_factory=dict)
    built_at: float = 0.0
    excluded_duplicates: int = 0
    sanitized: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def targets_in(self, prefix: Prefix) -> list[tuple[int, int, GroundTruthEntry]]:
        """Entries inside ``prefix``: HTTPS first, then by address and port."""
        found = [(a, p, e) for (a, p), e in self.entries.items() if prefix.contains_address(a)]
        found.sort(key=lambda t: (t[2].protocol != "https", t[0], t[1]))
        return found

    def is_unique(self) -> bool:
        """Every fingerprint belongs to exactly one address."""
        owners: dict[bytes, set[int]] = defaultdict(set)
        for (address, _), e in self.entries.items():
            owners[e.fingerprint].add(address)
        return all(len(a) == 1 for a in owners.values())


def build_ground_truth(observations: Iterable[KeyObservation], built_at: float | None = None) -> GroundTruth:
    """Keep only keys presented by a single host.

    A key served on several ports of the same address is kept; a key seen on
    two or more addresses (default certificates, shared appliances) is
    dropped everywhere.  For a repeated (address, port) the latest
    observation wins.
    """
    latest: dict[tuple[int, int], KeyObservation] = {}
    for obs in observations:
        cur = latest.get((obs.address, obs.port))
        if cur is None or obs.observed_at >= cur.observed_at:
            latest[(obs.address, obs.port)] = obs
    owners: dict[bytes, set[int]] = defaultdict(set)
    for obs in latest.values():
        owners[obs.key_fingerprint].add(obs.address)
    entries = {}
    excluded = 0
    for target, obs in sorted(latest.items()):
        if len(owners[obs.key_fingerprint]) > 1:
            excluded += 1
            continue
        entries[target] = GroundTruthEntry(obs.key_fingerprint, obs.protocol, obs.observed_at)
    if built_at is None:
        built_at = max((o.observed_at for o in latest.values()), default=0.0)
    return GroundTruth(entries, built_at, excluded)


def sanitize_ground_truth(gt: GroundTruth, journal: Journal) -> GroundTruth:
    """Drop hosts that sat inside a subMOAS subprefix when their key was recorded."""
    if not gt.entries:
        return gt
    times = [e.observed_at for e in gt.entries.values()]
    journal.require(min(times), max(times))
    active_cache: dict[float, list[Prefix]] = {}
    kept = {}
    for (address, port), e in gt.entries.items():
        subs = active_cache.get(e.observed_at)
        if subs is None:
            subs = [k.attacker_subprefix for k in journal.active_at(e.observed_at)]
            active_cache[e.observed_at] = subs
        if any(s.contains_address(address) for s in subs):
            continue
        kept[(address, port)] = e
    return GroundTruth(kept, gt.built_at, gt.excluded_duplicates, gt.sanitized + len(gt.entries) - len(kept))


# -- scanners -----------------------------------------------------------------


class ScanOutcome(str, enum.Enum):
    KEY = "key"
    PORT_CLOSED = "closed"
    HANDSHAKE_FAILED = "failed"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ScanResult:
    outcome: ScanOutcome
    at: float
    fingerprint: bytes | None = None


class Scanner(Protocol):
    def scan(self, address: int, port: int, protocol: str, *, at: float, timeout: float) -> ScanResult: ...


class SimulatedScanner:
    """Replays scripted responses from a fixture.

    A scan issued at ``at`` receives the first scripted response for the
    target stamped at or after ``at``.  A response later than ``at + timeout``
    (or none at all) is a timeout.  Targets missing from the script answer
    with a seeded choice between a closed port and a failed handshake.
    Scanning never touches the ground truth and holds no per-call state.
    """

    def __init__(self, script: Mapping[tuple[int, int], list[ScanResult]] | None = None, seed: int = 0):
        self.seed = seed
        self.script = {k: sorted(v, key=lambda r: r.at) for k, v in (script or {}).items()}

    @classmethod
    def parse_line(cls, line: str) -> tuple[tuple[int, int], ScanResult]:
        fields = line.split()
        if len(fields) != 6:
            raise ValueError(f"expected 6 fields, got {len(fields)}")
        addr, port, proto, fp, ts, outcome = fields
        if proto.lower() not in PROTOCOL_PORTS:
            raise ValueError(f"unknown protocol label {proto!r}")
        kind = ScanOutcome(outcome.lower())
        fingerprint = None
        if kind is ScanOutcome.KEY:
            fingerprint = bytes.fromhex(fp)
            if len(fingerprint) != FINGERPRINT_SIZE:
                raise ValueError(f"fingerprint must be {FINGERPRINT_SIZE} bytes")
        return (_addr(addr), int(port)), ScanResult(kind, float(ts), fingerprint)

    @classmethod
    def from_file(cls, path: str | Path, seed: int = 0, diagnostics: list[str] | None = None) -> "SimulatedScanner":
        script: dict[tuple[int, int], list[ScanResult]] = defaultdict(list)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    target, result = cls.parse_line(line)
                except ValueError as exc:
                    if diagnostics is not None:
                        diagnostics.append(f"line {lineno}: {exc}")
                    continue
                script[target].append(result)
        return cls(script, seed)

    def scan(self, address: int, port: int, protocol: str, *, at: float, timeout: float) -> ScanResult:
        responses = self.script.get((address, port))
        if responses is None:
            rng = random.Random(f"{self.seed}:{address}:{port}")
            outcome = rng.choice([ScanOutcome.PORT_CLOSED, ScanOutcome.HANDSHAKE_FAILED])
            return ScanResult(outcome, round(at + rng.uniform(0.05, min(1.0, timeout)), 3))
        for r in responses:
            if r.at >= at:
                if r.at > at + timeout:
                    break
                return r
        return ScanResult(ScanOutcome.TIMEOUT, at + timeout)


_STARTTLS = {
    "smtp-starttls": (b"EHLO scanner\r\n", b"STARTTLS\r\n"),
    "submission-starttls": (b"EHLO scanner\r\n", b"STARTTLS\r\n"),
    "imap-starttls": (None, b"a001 STARTTLS\r\n"),
    "pop3-starttls": (None, b"STLS\r\n"),
    "ftp-starttls": (None, b"AUTH TLS\r\n"),
}


class NetworkScanner:
    """Fetches the server key over a real connection (implicit TLS or STARTTLS)."""

    def __init__(self, server_name: str | None = None):
        self.server_name = server_name

    def _upgrade(self, sock: socket.socket, protocol: str) -> None:
        hello, starttls = _STARTTLS[protocol]
        fh = sock.makefile("rb")
        fh.readline()  # greeting
        if hello:
            sock.sendall(hello)
            while True:
                line = fh.readline()
                if not line or line[3:4] != b"-":
                    break
        sock.sendall(starttls)
        reply = fh.readline()
        if not reply or reply[:1] in (b"4", b"5", b"-") or reply.startswith((b"a001 NO", b"a001 BAD")):
            raise ssl.SSLError(f"STARTTLS refused: {reply!r}")

    def scan(self, address: int, port: int, protocol: str, *, at: float | None = None, timeout: float) -> ScanResult:
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
        try:
            with socket.create_connection((_fmt_addr(address), port), timeout=timeout) as sock:
                if protocol in _STARTTLS:
                    self._upgrade(sock, protocol)
                with ctx.wrap_socket(sock, server_hostname=self.server_name) as tls:
                    der = tls.getpeercert(binary_form=True)
        except ConnectionRefusedError:
            return ScanResult(ScanOutcome.PORT_CLOSED, time.time())
        except (socket.timeout, TimeoutError):
            return ScanResult(ScanOutcome.TIMEOUT, time.time())
        except (ssl.SSLError, OSError):
            return ScanResult(ScanOutcome.HANDSHAKE_FAILED, time.time())
        if not der:
            return ScanResult(ScanOutcome.HANDSHAKE_FAILED, time.time())
        return ScanResult(ScanOutcome.KEY, time.time(), fingerprint_certificate(der))


# -- filter -------------------------------------------------------------------


def tls_filter(
    gt: GroundTruth | None,
    scanner: Scanner | None,
    event: Any,
    journal: Journal | None,
    *,
    start: float | None = None,
    timeout: float = DEFAULT_TARGET_TIMEOUT,
    budget: float = DEFAULT_SCAN_BUDGET,
    parallelism: int = DEFAULT_PARALLELISM,
) -> FilterVerdict:
    """Rescan ground-truth hosts inside the attacker's subprefix.

    Targets are scanned in batches of ``parallelism``; scanning stops after
    the first batch with a matching key or when the budget is spent.  The
    whole scan interval must fall inside a stretch where the event held
    steady, otherwise every result is discarded.
    """
    if gt is None or scanner is None:
        return FilterVerdict.not_covered(reason="no ground truth or scanner")
    targets = gt.targets_in(event.attacker_subprefix)
    if not targets:
        return FilterVerdict.not_covered(reason="no ground-truth hosts in subprefix")

    t_begin = float(start if start is not None else event.first_seen)
    clock = t_begin
    scanned: list[tuple[int, int, GroundTruthEntry, ScanResult]] = []
    budget_hit = False
    workers = max(1, parallelism)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i in range(0, len(targets), workers):
            if clock - t_begin >= budget:
                budget_hit = True
                break
            batch = targets[i : i + workers]
            at = clock
            results = list(pool.map(lambda t: scanner.scan(t[0], t[1], t[2].protocol, at=at, timeout=timeout), batch))
            scanned.extend((a, p, e, r) for (a, p, e), r in zip(batch, results))
            clock = max([clock] + [r.at for r in results])
            if any(r.outcome is ScanOutcome.KEY and r.fingerprint == e.fingerprint for (_, _, e), r in zip(batch, results)):
                break

    times = [t_begin] + [r.at for *_, r in scanned]
    interval = (min(times), max(times))
    counts: Counter = Counter()
    matches = []
    for a, p, e, r in scanned:
        if r.outcome is ScanOutcome.KEY:
            if r.fingerprint == e.fingerprint:
                counts["same_key"] += 1
                matches.append({"address": _fmt_addr(a), "port": p, "protocol": e.protocol, "at": r.at})
            else:
                counts["different_key"] += 1
        else:
            counts[r.outcome.value] += 1
    evidence: dict[str, Any] = {
        "targets": len(targets),
        "scanned": len(scanned),
        "interval": list(interval),
        "counts": dict(sorted(counts.items())),
    }
    if budget_hit:
        evidence["budget_exhausted"] = True

    if journal is None:
        return FilterVerdict.discarded(reason="no routing journal to confirm event stability", **evidence)
    try:
        stable = event_stable_during(journal, event, interval)
    except JournalCoverageError as exc:
        return FilterVerdict.discarded(reason=str(exc), **evidence)
    if not stable:
        return FilterVerdict.discarded(reason="event changed or vanished during the scan", **evidence)
    if matches:
        return FilterVerdict.legit(matches=matches, **evidence)
    if scanned and counts["timeout"] == len(scanned):
        return FilterVerdict.inconclusive(reason="all targets timed out", **evidence)
    return FilterVerdict.inconclusive(reason="no unchanged key observed", **evidence)
