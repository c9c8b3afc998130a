"""Wire shapes shared by the websocket stream and the HTTP endpoints."""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Literal

from pydantic import BaseModel, Field

from ..hdsrs.store import attrs_to_json
from ..services.alerts import Notification
from ..services.flap import FlapEvent
from ..services.hijack import HijackAlert
from ..services.reach import ReachabilityChange, ReachabilityRow

SESSION_KINDS = ("BFV", "RTV", "SR", "RFD", "HRTV", "HSR", "alert-feed")
EVENT_KINDS = ("snapshot", "delta", "stat", "alert", "error", "end")


class OpenFrame(BaseModel):
    """Client request to open one streaming session on the shared socket."""

    op: Literal["open"]
    kind: Literal["BFV", "RTV", "SR", "RFD", "HRTV", "HSR", "alert-feed"]
    params: dict = Field(default_factory=dict)


class RuleSink(BaseModel):
    kind: Literal["webhook", "inbox"]
    url: str | None = None


class RuleSubject(BaseModel):
    prefix: str
    mode: Literal["exact", "more_specifics", "less_specifics", "all"] = "exact"


class RuleDoc(BaseModel):
    """PUT /alerts/rules body; ``owner`` is always the authenticated user."""

    rule_id: str
    trigger: Literal["flap", "hijack", "unreachable", "reachable-again"]
    subject: RuleSubject
    sinks: list[RuleSink] = Field(min_length=1)
    throttle_s: float = 0.0


class AckRequest(BaseModel):
    notification_id: str


def parse_instant(value) -> int:
    """An instant as µs since epoch; accepts integers or RFC 3339 text."""
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if not text:
        raise ValueError("empty instant")
    if text.lstrip("-").isdigit():
        return int(text)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1_000_000)


# -- event payload renderers (dataclasses -> JSON-ready dicts) ---------------


def flap_payload(event: FlapEvent) -> dict:
    return {
        "event": "flap",
        "feeder": event.feeder_id,
        "prefix": str(event.prefix),
        "flap_type": event.flap_type,
        "occurrences": event.occurrences,
        "class_counts": {name: count for name, count in event.class_counts},
        "first_at": event.first_timestamp,
        "last_at": event.last_timestamp,
    }


def hijack_payload(alert: HijackAlert) -> dict:
    return {
        "event": "hijack",
        "class": alert.hijack_class,
        "feeder": alert.feeder_id,
        "announced": str(alert.announced),
        "victim": str(alert.victim),
        "victim_as": sorted(alert.victim_as),
        "origin_as": alert.origin_as,
        "candidate_origins": list(alert.candidate_origins),
        "as_path": [[seg, list(members)] for seg, members in alert.as_path],
        "malformed_evidence": alert.malformed_evidence,
        "at": alert.timestamp,
    }


def reach_change_payload(change: ReachabilityChange) -> dict:
    return {
        "event": "reachability",
        "prefix": str(change.prefix),
        "feeder": change.feeder_id,
        "reachable": change.reachable,
        "was_reachable": change.was_reachable,
        "via": str(change.via) if change.via is not None else None,
        "at": change.timestamp,
    }


def reach_row_payload(row: ReachabilityRow) -> dict:
    out = {
        "feeder": row.feeder_id,
        "reachable": row.reachable,
        "via": str(row.via) if row.via is not None else None,
        "changed_at": row.changed_at,
    }
    if row.entry is not None:
        out["attributes"] = attrs_to_json(row.entry.attributes)
    return out


def notification_payload(notification: Notification) -> dict:
    return notification.to_dict()
