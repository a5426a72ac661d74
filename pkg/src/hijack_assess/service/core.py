"""Long-running assessment state shared by the HTTP and stdio front ends."""

from __future__ import annotations

import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

from ..assessment import FILTER_NAMES, Alarm, AlarmQueue, Assessment, RunReport, Stores, build_report
from ..rib import BgpUpdate, EventKey, RibEngine, SubMoasEvent, UpdateResult


class AssessmentService:
    """Single-writer feed ingestion plus alarm assessment.

    An alarm is answered as soon as the feed covers every scan it may
    trigger; until then it is reported as pending and settled by later
    updates (or by :meth:`flush`).  One lock serializes all state access.
    """

    def __init__(self, stores: Stores):
        if stores.engine is None:
            stores.engine = RibEngine()
        self.stores = stores
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=len(FILTER_NAMES))
        self.queue = AlarmQueue(stores, self._pool)
        self.rejections: Counter = Counter()

    def close(self) -> None:
        self._pool.shutdown()

    def ingest(self, updates: list[BgpUpdate]) -> UpdateResult:
        opened: list[SubMoasEvent] = []
        closed: list[EventKey] = []
        with self._lock:
            for u in updates:
                r = self.queue.apply(u)
                opened.extend(r.opened)
                closed.extend(r.closed)
        return UpdateResult(opened, closed)

    def submit(self, alarm: Alarm) -> Assessment | None:
        """Assessment of ``alarm``, or None while it is still pending."""
        with self._lock:
            return self.queue.take(alarm)

    def result(self, key: EventKey) -> Assessment | None:
        with self._lock:
            return self.queue.result(key)

    def flush(self) -> list[Assessment]:
        with self._lock:
            keys = [a.key for a in self.queue.pending]
            self.queue.flush()
            return [self.queue.result(k) for k in keys]

    def pending(self) -> list[Alarm]:
        with self._lock:
            return self.queue.pending

    def reject(self, reason: str) -> None:
        with self._lock:
            self.rejections[reason] += 1

    def events(self, open_only: bool = False) -> list[SubMoasEvent]:
        with self._lock:
            engine = self.stores.engine
            return engine.open_events() if open_only else engine.events()

    def assessments(self) -> list[Assessment]:
        with self._lock:
            return self.queue.assessments()

    def report(self) -> RunReport:
        with self._lock:
            return build_report(self.queue.assessments(), self.rejections)
