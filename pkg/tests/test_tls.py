import datetime
import hashlib
import random
import socket
import ssl
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ALICE, MALLORY, P
from hijack_assess.rib import EventKey, Journal, JournalCoverageError, RibEngine, SubMoasEvent, announce, withdraw
from hijack_assess.tls import (
    PROTOCOL_PORTS,
    KeyObservation,
    NetworkScanner,
    ScanOutcome,
    ScanResult,
    SimulatedScanner,
    build_ground_truth,
    fingerprint_certificate,
    fingerprint_spki,
    read_observations,
    sanitize_ground_truth,
    tls_filter,
)
from hijack_assess.verdict import Status

T0 = 1_000_000
SUB = P("10.1.0.0/17")
KEY = EventKey(ALICE, P("10.1.0.0/16"), MALLORY, SUB)


def addr(text):
    import ipaddress

    return int(ipaddress.IPv4Address(text))


def fp(label):
    return hashlib.sha256(label.encode()).digest()


def obs(a, port, label, proto="https", t=T0 - 1000):
    return KeyObservation(addr(a), port, proto, fp(label), t)


def steady_journal(end=T0 + 3600):
    eng = RibEngine()
    eng.replay([announce(T0 - 5000, "10.1.0.0/16", [9, ALICE]), announce(T0, SUB, [8, MALLORY])])
    eng.apply_update(announce(end, "192.0.2.0/24", [9, 1]))
    return eng.journal


EVENT = SubMoasEvent.from_key(KEY, T0)


def test_protocol_labels():
    assert len(PROTOCOL_PORTS) == 14 and "submission-starttls" in PROTOCOL_PORTS


def test_observation_line_round_trip():
    o = obs("10.1.0.1", 443, "a")
    assert KeyObservation.parse(o.to_line()) == o
    with pytest.raises(ValueError):
        KeyObservation.parse("10.1.0.1 443 gopher " + "00" * 32 + " 5")
    with pytest.raises(ValueError):
        KeyObservation.parse("10.1.0.1 443 https abcd 5")
    with pytest.raises(ValueError):
        KeyObservation.parse("10.1.0.1 0 https " + "00" * 32 + " 5")


def test_read_observations_reports_bad_lines(tmp_path):
    f = tmp_path / "gt.txt"
    f.write_text("# header\n" + obs("10.1.0.1", 443, "a").to_line() + "\nnonsense\n")
    diags = []
    assert len(read_observations(f, diags)) == 1 and len(diags) == 1


def test_ground_truth_examples():
    gt = build_ground_truth([obs("1.2.3.4", 443, "k"), obs("5.6.7.8", 443, "k")])
    assert len(gt) == 0 and gt.excluded_duplicates == 2
    gt = build_ground_truth([obs("1.2.3.4", 443, "k"), obs("1.2.3.4", 993, "k", "imaps")])
    assert len(gt) == 2 and gt.is_unique()
    assert len(build_ground_truth([])) == 0


def test_ground_truth_latest_observation_wins():
    gt = build_ground_truth([obs("1.2.3.4", 443, "old", t=1), obs("1.2.3.4", 443, "new", t=2)])
    assert gt.entries[(addr("1.2.3.4"), 443)].fingerprint == fp("new")


def test_targets_https_first():
    gt = build_ground_truth(
        [obs("10.1.0.2", 993, "a", "imaps"), obs("10.1.0.9", 443, "b"), obs("10.1.0.1", 25, "c", "smtp-starttls")]
    )
    order = [(a, p) for a, p, _ in gt.targets_in(SUB)]
    assert order == [(addr("10.1.0.9"), 443), (addr("10.1.0.1"), 25), (addr("10.1.0.2"), 993)]


def test_sanitize_examples():
    j = steady_journal()
    gt = build_ground_truth([obs("10.1.0.1", 443, "in", t=T0 + 10), obs("10.2.0.1", 443, "out", t=T0 + 10)])
    clean = sanitize_ground_truth(gt, j)
    assert list(clean.entries) == [(addr("10.2.0.1"), 443)]
    assert clean.sanitized == 1 and clean.is_unique()
    before = build_ground_truth([obs("10.1.0.1", 443, "in", t=T0 - 10)])
    assert sanitize_ground_truth(before, j).entries == before.entries
    with pytest.raises(JournalCoverageError):
        sanitize_ground_truth(build_ground_truth([obs("10.1.0.1", 443, "x", t=1)]), j)


def test_sanitize_quiet_journal_leaves_store_unchanged():
    j = Journal(start=0, end=10**7)
    gt = build_ground_truth([obs("10.1.0.1", 443, "a", t=5)])
    assert sanitize_ground_truth(gt, j) == gt


def scanner_for(responses, seed=0):
    script = {}
    for a, port, result in responses:
        script.setdefault((addr(a), port), []).append(result)
    return SimulatedScanner(script, seed)


def key_at(label, t):
    return ScanResult(ScanOutcome.KEY, t, fp(label))


def test_filter_legitimate_with_one_witness_among_many():
    hosts = [obs(f"10.1.0.{i}", 443, f"h{i}") for i in range(1, 30)]
    gt = build_ground_truth(hosts)
    responses = [(f"10.1.0.{i}", 443, key_at(f"other{i}", T0 + 1)) for i in range(1, 30)]
    responses[17] = ("10.1.0.18", 443, key_at("h18", T0 + 1))
    v = tls_filter(gt, scanner_for(responses), EVENT, steady_journal(), parallelism=32)
    assert v.legitimate
    assert v.evidence["counts"] == {"different_key": 28, "same_key": 1}
    assert v.evidence["matches"][0]["address"] == "10.1.0.18"


def test_filter_all_different_is_inconclusive():
    gt = build_ground_truth([obs("10.1.0.1", 443, "a")])
    v = tls_filter(gt, scanner_for([("10.1.0.1", 443, key_at("b", T0 + 1))]), EVENT, steady_journal())
    assert v.status is Status.INCONCLUSIVE


def test_filter_withdrawn_mid_scan_is_discarded():
    eng = RibEngine()
    eng.replay(
        [
            announce(T0 - 5000, "10.1.0.0/16", [9, ALICE]),
            announce(T0, SUB, [8, MALLORY]),
            withdraw(T0 + 2, SUB, 8),
            announce(T0 + 4, SUB, [8, MALLORY]),
            announce(T0 + 3600, "192.0.2.0/24", [9, 1]),
        ]
    )
    gt = build_ground_truth([obs("10.1.0.1", 443, "a")])
    v = tls_filter(gt, scanner_for([("10.1.0.1", 443, key_at("a", T0 + 5))]), EVENT, eng.journal)
    assert v.status is Status.DISCARDED


def test_filter_not_covered_and_timeouts():
    gt = build_ground_truth([obs("10.9.0.1", 443, "a")])
    assert tls_filter(gt, SimulatedScanner(), EVENT, steady_journal()).status is Status.NOT_COVERED
    assert tls_filter(None, SimulatedScanner(), EVENT, steady_journal()).status is Status.NOT_COVERED
    gt = build_ground_truth([obs("10.1.0.1", 443, "a"), obs("10.1.0.2", 443, "b")])
    late = [("10.1.0.1", 443, key_at("a", T0 + 60)), ("10.1.0.2", 443, ScanResult(ScanOutcome.TIMEOUT, T0 + 10))]
    v = tls_filter(gt, scanner_for(late), EVENT, steady_journal())
    assert v.status is Status.INCONCLUSIVE and v.evidence["reason"] == "all targets timed out"


def test_filter_discards_beyond_journal():
    gt = build_ground_truth([obs("10.1.0.1", 443, "a")])
    v = tls_filter(gt, scanner_for([("10.1.0.1", 443, key_at("a", T0 + 5))]), EVENT, steady_journal(end=T0 + 3))
    assert v.status is Status.DISCARDED and "outside journal" in v.evidence["reason"]


def test_filter_budget_stops_scanning():
    hosts = [obs(f"10.1.0.{i}", 443, f"h{i}") for i in range(1, 11)]
    responses = [(f"10.1.0.{i}", 443, ScanResult(ScanOutcome.TIMEOUT, T0 + 10 * i)) for i in range(1, 11)]
    v = tls_filter(build_ground_truth(hosts), scanner_for(responses), EVENT, steady_journal(), parallelism=1, budget=25)
    assert v.evidence["budget_exhausted"] and v.evidence["scanned"] < 10


def test_simulated_scanner_fixture_format(tmp_path):
    f = tmp_path / "scan.txt"
    f.write_text(f"10.1.0.1 443 https {fp('a').hex()} {T0 + 1} key\n10.1.0.2 443 https - {T0} closed\nbad line\n")
    diags = []
    s = SimulatedScanner.from_file(f, diagnostics=diags)
    assert len(diags) == 1
    assert s.scan(addr("10.1.0.1"), 443, "https", at=T0, timeout=10).fingerprint == fp("a")
    assert s.scan(addr("10.1.0.1"), 443, "https", at=T0 + 2, timeout=10).outcome is ScanOutcome.TIMEOUT
    assert s.scan(addr("10.1.0.2"), 443, "https", at=T0, timeout=10).outcome is ScanOutcome.PORT_CLOSED


def test_simulated_scanner_seeded_determinism():
    a = SimulatedScanner(seed=7).scan(addr("10.1.0.1"), 443, "https", at=T0, timeout=10)
    b = SimulatedScanner(seed=7).scan(addr("10.1.0.1"), 443, "https", at=T0, timeout=10)
    assert a == b and a.outcome in (ScanOutcome.PORT_CLOSED, ScanOutcome.HANDSHAKE_FAILED)


def test_scanner_does_not_touch_store():
    gt = build_ground_truth([obs("10.1.0.1", 443, "a")])
    snapshot = dict(gt.entries)
    tls_filter(gt, scanner_for([("10.1.0.1", 443, key_at("b", T0 + 1))]), EVENT, steady_journal())
    assert gt.entries == snapshot


# -- properties -------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_uniqueness_invariant_on_adversarial_input(seed):
    rng = random.Random(seed)
    keys = [f"k{i}" for i in range(6)]
    hosts = [f"10.1.0.{i}" for i in range(1, 6)]
    ports = [(443, "https"), (993, "imaps"), (25, "smtp-starttls")]
    observations = []
    for _ in range(rng.randint(0, 25)):
        port, proto = rng.choice(ports)
        observations.append(obs(rng.choice(hosts), port, rng.choice(keys), proto, t=rng.randint(0, 5)))
    gt = build_ground_truth(observations)
    assert gt.is_unique()
    assert sanitize_ground_truth(gt, Journal(start=0, end=10)).is_unique()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 39), st.integers(1, 8))
def test_one_witness_sufficiency(n, witness, parallelism):
    witness %= n
    hosts = [obs(f"10.1.{i // 200}.{i % 200 + 1}", 443, f"h{i}") for i in range(n)]
    gt = build_ground_truth(hosts)
    responses = []
    for i in range(n):
        label = f"h{i}" if i == witness else f"x{i}"
        responses.append((f"10.1.{i // 200}.{i % 200 + 1}", 443, key_at(label, T0 + 1)))
    v = tls_filter(gt, scanner_for(responses), EVENT, steady_journal(), parallelism=parallelism)
    assert v.legitimate


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.booleans())
def test_discard_dominance(flap_at, match):
    eng = RibEngine()
    eng.replay(
        [
            announce(T0 - 5000, "10.1.0.0/16", [9, ALICE]),
            announce(T0, SUB, [8, MALLORY]),
            withdraw(T0 + flap_at, SUB, 8),
            announce(T0 + flap_at, SUB, [8, MALLORY]),
            announce(T0 + 3600, "192.0.2.0/24", [9, 1]),
        ]
    )
    gt = build_ground_truth([obs("10.1.0.1", 443, "a")])
    v = tls_filter(gt, scanner_for([("10.1.0.1", 443, key_at("a" if match else "b", T0 + 10))]), EVENT, eng.journal)
    assert v.status is Status.DISCARDED


# -- real handshake against a local server ----------------------------------


def self_signed(tmp_path):
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(1)
        .not_valid_before(now - datetime.timedelta(days=1))
        .not_valid_after(now + datetime.timedelta(days=1))
        .sign(key, hashes.SHA256())
    )
    cert_path, key_path = tmp_path / "c.pem", tmp_path / "k.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(
        key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
    )
    spki = key.public_key().public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    return cert, cert_path, key_path, spki


def test_network_scanner_against_local_tls(tmp_path):
    from cryptography.hazmat.primitives import serialization

    cert, cert_path, key_path, spki = self_signed(tmp_path)
    assert fingerprint_certificate(cert.public_bytes(serialization.Encoding.DER)) == fingerprint_spki(spki)

    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.load_cert_chain(cert_path, key_path)
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    port = srv.getsockname()[1]

    def serve():
        conn, _ = srv.accept()
        try:
            with ctx.wrap_socket(conn, server_side=True):
                pass
        except (ssl.SSLError, OSError):
            pass

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    result = NetworkScanner().scan(addr("127.0.0.1"), port, "https", timeout=5)
    t.join(5)
    srv.close()
    assert result.outcome is ScanOutcome.KEY
    assert result.fingerprint == hashlib.sha256(spki).digest()


def test_network_scanner_closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    assert NetworkScanner().scan(addr("127.0.0.1"), port, "https", timeout=2).outcome is ScanOutcome.PORT_CLOSED
