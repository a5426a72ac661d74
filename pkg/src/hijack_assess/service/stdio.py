"""Line-delimited JSON front end over standard input/output.

Each input line is one JSON object.  Objects with an ``op`` field are
commands (``update``, ``events``, ``flush``, ``assessments``, ``report``);
anything else is treated as an alarm.  Every input line yields exactly one
output line.
"""

from __future__ import annotations

import json
from typing import IO, Any

from ..assessment import AlarmRejected, parse_alarm
from ..rib import FeedError, parse_update
from .core import AssessmentService
from .schemas import event_out


def handle(service: AssessmentService, record: dict[str, Any]) -> dict[str, Any]:
    op = record.get("op", "alarm")
    if op == "alarm":
        payload = record.get("alarm", record)
        try:
            alarm = parse_alarm({k: v for k, v in payload.items() if k != "op"})
        except AlarmRejected as exc:
            service.reject(exc.reason)
            return {"rejected": True, "reason": exc.reason}
        result = service.submit(alarm)
        return {"pending": True, "alarm": alarm.to_dict()} if result is None else result.to_dict()
    if op == "update":
        try:
            updates = [parse_update(line) for line in record.get("lines", [])]
        except FeedError as exc:
            return {"error": str(exc)}
        result = service.ingest(updates)
        return {
            "applied": len(updates),
            "opened": [event_out(e).model_dump() for e in result.opened],
            "closed": [str(k) for k in result.closed],
        }
    if op == "events":
        return {"events": [event_out(e).model_dump() for e in service.events(bool(record.get("open_only")))]}
    if op == "flush":
        return {"assessments": [a.to_dict() for a in service.flush()]}
    if op == "assessments":
        return {"assessments": [a.to_dict() for a in service.assessments()]}
    if op == "report":
        return {"report": service.report().to_dict()}
    return {"error": f"unknown op {op!r}"}


def serve_stdio(service: AssessmentService, stdin: IO[str], stdout: IO[str]) -> int:
    handled = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("expected a JSON object")
            reply = handle(service, record)
        except ValueError as exc:
            reply = {"error": str(exc)}
        stdout.write(json.dumps(reply, sort_keys=True) + "\n")
        stdout.flush()
        handled += 1
    return handled
