import io
import json
import threading

import pytest
from fastapi.testclient import TestClient

from conftest import FIXTURES, mixed20_stores
from hijack_assess.assessment import Stores, parse_alarm
from hijack_assess.rib import read_feed
from hijack_assess.service import AssessmentService, create_app
from hijack_assess.service.stdio import serve_stdio

BASE = 1438387200
END = BASE + 3600 * 21


def event(i, ts=None):
    return {
        "victim_as": 64600 + i,
        "victim_prefix": f"10.{i}.0.0/16",
        "attacker_as": 65100 + i,
        "attacker_subprefix": f"10.{i}.16.0/20",
        "reported_at": ts if ts is not None else BASE + 3600 * i,
    }


@pytest.fixture
def service():
    svc = AssessmentService(mixed20_stores())
    svc.ingest(read_feed(FIXTURES / "mixed20" / "feed.txt"))
    yield svc
    svc.close()


@pytest.fixture
def client(service):
    return TestClient(create_app(service))


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok" and body["irr_loaded"] and body["ground_truth_hosts"] > 0
    assert body["pending_alarms"] == 0


def test_alarm_assessed_with_evidence(client):
    r = client.post("/alarms", json=event(1))
    assert r.status_code == 200
    body = r.json()
    assert body["cumulative"] == "legitimate"
    assert body["filters"]["irr"]["status"] == "legitimate"
    assert body["filters"]["irr"]["evidence"]


def test_duplicate_alarm_counts_occurrences(client):
    client.post("/alarms", json=event(12))
    r = client.post("/alarms", json={**event(12), "victim_as": "AS64612"})
    assert r.json()["occurrences"] == 2
    assert r.json()["filters"]["tls"]["status"] == "legitimate"


def test_rejection_is_422_and_counted(client):
    r = client.post("/alarms", json={**event(1), "attacker_subprefix": "10.1.0.0/16"})
    assert r.status_code == 422 and r.json()["rejected"]
    rep = json.loads(client.get("/report").content)
    assert rep["report"]["rejected_alarms"] == 1


def test_alarm_past_feed_is_pending_until_flush(client):
    late = {**event(3), "reported_at": END}
    r = client.post("/alarms", json=late)
    assert r.status_code == 202 and r.json()["pending"]
    assert len(client.get("/alarms/pending").json()) == 1
    settled = client.post("/flush").json()
    assert len(settled) == 1 and settled[0]["filters"]["irr"]["status"] == "legitimate"
    assert client.get("/alarms/pending").json() == []


def test_pending_alarm_settles_when_feed_advances(client):
    client.post("/alarms", json={**event(3), "reported_at": END})
    r = client.post("/updates", json={"lines": [f"{END + 3600} A 198.51.100.0/24 65001 65001 64496"]})
    assert r.status_code == 200 and r.json()["applied"] == 1
    assert client.get("/alarms/pending").json() == []
    assert len(client.get("/assessments").json()) == 1


def test_updates_open_events_and_report_diagnostics(client):
    lines = [
        f"{END + 10} A 172.16.0.0/16 65001 65001 64999",
        f"{END + 20} A 172.16.1.0/24 65002 65002 64998",
        "garbage",
    ]
    body = client.post("/updates", json={"lines": lines}).json()
    assert body["applied"] == 2 and len(body["diagnostics"]) == 1
    assert [e["attacker_subprefix"] for e in body["opened"]] == ["172.16.1.0/24"]
    open_events = client.get("/events", params={"open_only": True}).json()
    assert any(e["victim_as"] == 64999 for e in open_events)


def test_report_formats(client):
    client.post("/alarms", json=event(1))
    table = client.get("/report", params={"format": "table"})
    assert table.headers["content-type"].startswith("text/plain")
    assert "All subMOAS events               1   100.00%" in table.text
    assert client.get("/report", params={"format": "xml"}).status_code == 422


def test_concurrent_submissions_are_serialized(service):
    errors = []

    def worker(i):
        try:
            for _ in range(5):
                service.submit(parse_alarm(event(i)))
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(1, 11)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    rep = service.report()
    assert rep.total_events == 10 and rep.occurrences == 50


def test_stdio_one_reply_per_line(service):
    lines = [
        json.dumps(event(9)),
        json.dumps({**event(9), "attacker_as": 64609}),
        "not json",
        json.dumps({"op": "events", "open_only": True}),
        json.dumps({"op": "update", "lines": [f"{END + 5} A 203.0.113.0/24 65001 65001 64496"]}),
        json.dumps({"op": "report"}),
        json.dumps({"op": "nope"}),
        "",
    ]
    out = io.StringIO()
    assert serve_stdio(service, io.StringIO("\n".join(lines) + "\n"), out) == 7
    replies = [json.loads(l) for l in out.getvalue().splitlines()]
    assert replies[0]["filters"]["topology"]["status"] == "legitimate"
    assert replies[1]["rejected"]
    assert "error" in replies[2]
    assert isinstance(replies[3]["events"], list)
    assert replies[4]["applied"] == 1
    assert replies[5]["report"]["total_events"] == 1 and replies[5]["report"]["rejected_alarms"] == 1
    assert "unknown op" in replies[6]["error"]


def test_stdio_pending_then_flush():
    svc = AssessmentService(Stores())
    out = io.StringIO()
    src = "\n".join([json.dumps(event(1, ts=10)), json.dumps({"op": "flush"})]) + "\n"
    serve_stdio(svc, io.StringIO(src), out)
    first, second = (json.loads(l) for l in out.getvalue().splitlines())
    assert first["pending"] and len(second["assessments"]) == 1
    svc.close()
