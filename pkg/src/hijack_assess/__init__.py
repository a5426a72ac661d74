"""Legitimization of subprefix hijack alarms from IRR, AS-path and TLS evidence."""

from .assessment import (
    Alarm,
    AlarmQueue,
    AlarmRejected,
    Assessment,
    Cumulative,
    RunReport,
    Stores,
    assess,
    build_report,
    emit_report,
    parse_alarm,
    parse_report,
    run_batch,
)
from .model import ConflictClass, Prefix, RibView, Route, classify_conflict
from .rib import BgpUpdate, PrefixTree, RibEngine, SubMoasEvent
from .verdict import FilterVerdict, Status

__version__ = "0.1.0"

__all__ = [
    "Alarm",
    "AlarmQueue",
    "AlarmRejected",
    "Assessment",
    "BgpUpdate",
    "ConflictClass",
    "Cumulative",
    "FilterVerdict",
    "Prefix",
    "PrefixTree",
    "RibEngine",
    "RibView",
    "Route",
    "RunReport",
    "Status",
    "Stores",
    "SubMoasEvent",
    "assess",
    "build_report",
    "classify_conflict",
    "emit_report",
    "parse_alarm",
    "parse_report",
    "run_batch",
]
