"""HTTP front end."""

from __future__ import annotations

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse, Response

from ..assessment import AlarmRejected, emit_report, parse_alarm
from ..rib import FeedError, parse_update
from .core import AssessmentService
from .schemas import AlarmIn, AssessmentOut, EventOut, HealthOut, PendingOut, RejectionOut, UpdatesIn, UpdatesOut, event_out


def create_app(service: AssessmentService) -> FastAPI:
    app = FastAPI(title="hijack-assess", version="0.1.0")
    app.state.service = service

    @app.get("/health", response_model=HealthOut)
    def health() -> HealthOut:
        stores = service.stores
        return HealthOut(
            routes=len(stores.engine.tree),
            open_events=len(service.events(open_only=True)),
            irr_loaded=stores.irr is not None,
            ground_truth_hosts=len(stores.ground_truth) if stores.ground_truth is not None else 0,
            pending_alarms=len(service.pending()),
        )

    @app.post(
        "/alarms",
        response_model=AssessmentOut,
        responses={202: {"model": PendingOut}, 422: {"model": RejectionOut}},
    )
    def submit_alarm(body: AlarmIn):
        try:
            alarm = parse_alarm(body.model_dump())
        except AlarmRejected as exc:
            service.reject(exc.reason)
            return JSONResponse(status_code=422, content=RejectionOut(reason=exc.reason).model_dump())
        result = service.submit(alarm)
        if result is None:
            return JSONResponse(status_code=202, content=PendingOut(alarm=alarm.to_dict()).model_dump())
        return result.to_dict()

    @app.get("/assessments", response_model=list[AssessmentOut])
    def list_assessments():
        return [a.to_dict() for a in service.assessments()]

    @app.get("/alarms/pending")
    def list_pending() -> list[dict]:
        return [a.to_dict() for a in service.pending()]

    @app.post("/flush", response_model=list[AssessmentOut])
    def flush():
        """Settle pending alarms against the feed received so far."""
        return [a.to_dict() for a in service.flush()]

    @app.post("/updates", response_model=UpdatesOut)
    def post_updates(body: UpdatesIn):
        updates, diagnostics = [], []
        for n, line in enumerate(body.lines, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                updates.append(parse_update(line))
            except FeedError as exc:
                diagnostics.append(f"line {n}: {exc}")
        engine = service.stores.engine
        before = len(engine.diagnostics)
        result = service.ingest(updates)
        diagnostics.extend(engine.diagnostics[before:])
        return UpdatesOut(
            applied=len(updates),
            opened=[event_out(e) for e in result.opened],
            closed=[event_out(k, closed=True, last_seen=engine.journal.end) for k in result.closed],
            diagnostics=diagnostics,
        )

    @app.get("/events", response_model=list[EventOut])
    def list_events(open_only: bool = False):
        return [event_out(e) for e in service.events(open_only=open_only)]

    @app.get("/report")
    def report(format: str = Query("structured", pattern="^(table|structured)$")):
        body = emit_report(service.report(), format)
        media = "application/json" if format == "structured" else "text/plain"
        return Response(content=body, media_type=media)

    return app
