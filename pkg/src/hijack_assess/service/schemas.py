"""Request and response models for the HTTP and stdio front ends."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class AlarmIn(BaseModel):
    victim_as: int | str
    victim_prefix: str
    attacker_as: int | str
    attacker_subprefix: str
    reported_at: int
    source: str = "external"


class VerdictOut(BaseModel):
    status: Literal["legitimate", "inconclusive", "not_covered", "discarded"]
    evidence: dict[str, Any] = Field(default_factory=dict)


class AssessmentOut(BaseModel):
    alarm: dict[str, Any]
    occurrences: int
    cumulative: Literal["legitimate", "suspicious", "not_covered"]
    filters: dict[str, VerdictOut]


class RejectionOut(BaseModel):
    rejected: Literal[True] = True
    reason: str


class PendingOut(BaseModel):
    pending: Literal[True] = True
    alarm: dict[str, Any]


class UpdatesIn(BaseModel):
    lines: list[str] = Field(description="feed lines: <ts> <A|W> <prefix> <peer> [path...]")


class EventOut(BaseModel):
    victim_as: int
    victim_prefix: str
    attacker_as: int
    attacker_subprefix: str
    first_seen: int
    last_seen: int
    closed: bool


class UpdatesOut(BaseModel):
    applied: int
    opened: list[EventOut]
    closed: list[EventOut]
    diagnostics: list[str]


class HealthOut(BaseModel):
    status: Literal["ok"] = "ok"
    routes: int
    open_events: int
    irr_loaded: bool
    ground_truth_hosts: int
    pending_alarms: int


def event_out(ev: Any, closed: bool | None = None, last_seen: int | None = None) -> EventOut:
    return EventOut(
        victim_as=ev.victim_as,
        victim_prefix=str(ev.victim_prefix),
        attacker_as=ev.attacker_as,
        attacker_subprefix=str(ev.attacker_subprefix),
        first_seen=getattr(ev, "first_seen", last_seen or 0),
        last_seen=last_seen if last_seen is not None else getattr(ev, "last_seen", 0),
        closed=closed if closed is not None else getattr(ev, "closed", False),
    )
