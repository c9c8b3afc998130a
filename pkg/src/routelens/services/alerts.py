"""Alert rules, notification fan-out, and the durable inbox.

A rule names a trigger (``flap``, ``hijack``, ``unreachable``,
``reachable-again``), a subject (prefix + portion mode), one or more sinks
(webhook URL or the user's inbox) and a per-subject throttle.  Evaluating
an event against the rule set yields one :class:`Notification` per
matching (rule, sink); webhook sinks are POSTed with exponential-backoff
retry, inbox sinks are stored durably until acknowledged.

Webhook payload::

    {"rule_id": …, "event_type": "hijack|flap|unreachable|reachable",
     "subject": "<prefix>", "detail": {…}, "observed_at": "<RFC3339 µs>"}

Rules file schema (JSON)::

    {"rules": [{"rule_id": "r1", "owner": "ops", "trigger": "hijack",
                "subject": {"prefix": "192.0.2.0/24", "mode": "all"},
                "sinks": [{"kind": "inbox"},
                          {"kind": "webhook", "url": "http://…"}],
                "throttle_s": 60}]}
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from ..clock import Clock, SystemClock, rfc3339_us
from ..wire.prefix import Prefix
from .flap import FlapEvent
from .flow import portion_match
from .hijack import HijackAlert
from .reach import ReachabilityChange

TRIGGERS = ("flap", "hijack", "unreachable", "reachable-again")
SUBJECT_MODES = ("exact", "more_specifics", "less_specifics", "all")

WEBHOOK_ATTEMPTS = 3
WEBHOOK_BACKOFF_S = 0.5  # doubles per retry


class SinkUnreachable(Exception):
    """A webhook sink could not be delivered to after all attempts."""


@dataclass(frozen=True, slots=True)
class AlertRule:
    rule_id: str
    owner: str
    trigger: str
    subject: Prefix
    subject_mode: str
    sinks: tuple[dict, ...]
    throttle_s: float = 0.0

    def __post_init__(self):
        if self.trigger not in TRIGGERS:
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if self.subject_mode not in SUBJECT_MODES:
            raise ValueError(f"unknown subject mode {self.subject_mode!r}")
        if not self.sinks:
            raise ValueError("a rule needs at least one sink")
        for sink in self.sinks:
            kind = sink.get("kind")
            if kind == "webhook":
                if not sink.get("url"):
                    raise ValueError("webhook sink needs a url")
            elif kind != "inbox":
                raise ValueError(f"unknown sink kind {kind!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "AlertRule":
        return cls(
            rule_id=doc["rule_id"],
            owner=doc.get("owner", ""),
            trigger=doc["trigger"],
            subject=Prefix.parse(doc["subject"]["prefix"]),
            subject_mode=doc["subject"].get("mode", "exact"),
            sinks=tuple(dict(s) for s in doc["sinks"]),
            throttle_s=float(doc.get("throttle_s", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "owner": self.owner,
            "trigger": self.trigger,
            "subject": {"prefix": str(self.subject), "mode": self.subject_mode},
            "sinks": [dict(s) for s in self.sinks],
            "throttle_s": self.throttle_s,
        }


@dataclass
class SinkDelivery:
    sink: dict
    state: str = "pending"  # pending | delivered | failed
    attempts: int = 0
    error: str | None = None


@dataclass
class Notification:
    notification_id: str
    rule_id: str
    owner: str
    payload: dict
    created_at: int  # µs
    delivery: SinkDelivery = field(default_factory=lambda: SinkDelivery({"kind": "inbox"}))
    acknowledged: bool = False

    def to_dict(self) -> dict:
        return {
            "notification_id": self.notification_id,
            "rule_id": self.rule_id,
            "owner": self.owner,
            "payload": self.payload,
            "created_at": self.created_at,
            "sink": dict(self.delivery.sink),
            "state": self.delivery.state,
            "attempts": self.delivery.attempts,
            "error": self.delivery.error,
            "acknowledged": self.acknowledged,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Notification":
        return cls(
            notification_id=doc["notification_id"],
            rule_id=doc["rule_id"],
            owner=doc.get("owner", ""),
            payload=doc["payload"],
            created_at=doc["created_at"],
            delivery=SinkDelivery(
                sink=doc.get("sink", {"kind": "inbox"}),
                state=doc.get("state", "pending"),
                attempts=doc.get("attempts", 0),
                error=doc.get("error"),
            ),
            acknowledged=doc.get("acknowledged", False),
        )


def event_facts(event) -> tuple[str, Prefix, int, dict]:
    """(event type, subject prefix, timestamp µs, detail) for any alertable event."""
    if isinstance(event, FlapEvent):
        return (
            "flap",
            event.prefix,
            event.last_timestamp,
            {
                "feeder": event.feeder_id,
                "flap_type": event.flap_type,
                "occurrences": event.occurrences,
                "class_counts": {k: v for k, v in event.class_counts},
                "first": event.first_timestamp,
                "last": event.last_timestamp,
            },
        )
    if isinstance(event, HijackAlert):
        return (
            "hijack",
            event.announced,
            event.timestamp,
            {
                "class": event.hijack_class,
                "origin_as": event.origin_as,
                "announced": str(event.announced),
                "victim": str(event.victim),
                "victim_as": sorted(event.victim_as),
                "feeder": event.feeder_id,
                "as_path": [[kind, list(asns)] for kind, asns in event.as_path],
                "malformed_evidence": event.malformed_evidence,
            },
        )
    if isinstance(event, ReachabilityChange):
        return (
            "unreachable" if not event.reachable else "reachable",
            event.prefix,
            event.timestamp,
            {
                "feeder": event.feeder_id,
                "reachable": event.reachable,
                "via": str(event.via) if event.via else None,
            },
        )
    raise TypeError(f"not an alertable event: {type(event).__name__}")


def _rule_matches(rule: AlertRule, event_type: str, subject: Prefix) -> bool:
    wanted = {"flap": "flap", "hijack": "hijack",
              "unreachable": "unreachable", "reachable-again": "reachable"}[rule.trigger]
    if event_type != wanted:
        return False
    return portion_match(subject, rule.subject, rule.subject_mode)


async def post_webhook(url: str, payload: dict) -> int:
    """Default webhook transport.  Returns the HTTP status code."""
    async with httpx.AsyncClient(timeout=10.0) as client:
        response = await client.post(url, json=payload)
        return response.status_code


class RuleEngine:
    """Evaluates events against the rule set and drives deliveries.

    The inbox (and its acknowledged flags) persists as a JSON file under
    ``state_dir`` so notifications survive restarts and are retrievable at
    the owner's next login.
    """

    def __init__(
        self,
        state_dir: str | Path | None = None,
        clock: Clock | None = None,
        webhook_transport=None,
    ) -> None:
        self.clock = clock or SystemClock()
        self._post = webhook_transport or post_webhook
        self._rules: dict[str, AlertRule] = {}
        self._inbox: list[Notification] = []
        self._last_fired: dict[tuple[str, str], int] = {}  # (rule, subject) -> µs
        self.suppressed: dict[str, int] = {}  # rule_id -> throttled event count
        # called with each notification after its delivery attempt settles
        self.on_notification: list = []
        self._state_dir = Path(state_dir) if state_dir else None
        if self._state_dir:
            self._state_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- rule management ---------------------------------------------------

    def put_rule(self, rule: AlertRule) -> None:
        self._rules[rule.rule_id] = rule
        self._save_rules()

    def remove_rule(self, rule_id: str) -> AlertRule | None:
        rule = self._rules.pop(rule_id, None)
        if rule is not None:
            self._save_rules()
        return rule

    def get_rule(self, rule_id: str) -> AlertRule | None:
        return self._rules.get(rule_id)

    def rules(self) -> list[AlertRule]:
        return [self._rules[k] for k in sorted(self._rules)]

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, event) -> list[Notification]:
        """Notifications for one event: one per matching (rule, sink)."""
        event_type, subject, observed_at, detail = event_facts(event)
        notifications = []
        for rule in self.rules():
            if not _rule_matches(rule, event_type, subject):
                continue
            throttle_key = (rule.rule_id, str(subject))
            last = self._last_fired.get(throttle_key)
            if last is not None and observed_at - last < int(rule.throttle_s * 1_000_000):
                self.suppressed[rule.rule_id] = self.suppressed.get(rule.rule_id, 0) + 1
                continue
            self._last_fired[throttle_key] = observed_at
            payload = {
                "rule_id": rule.rule_id,
                "event_type": event_type,
                "subject": str(subject),
                "detail": detail,
                "observed_at": rfc3339_us(observed_at / 1_000_000),
            }
            for sink in rule.sinks:
                notifications.append(
                    Notification(
                        notification_id=uuid.uuid4().hex,
                        rule_id=rule.rule_id,
                        owner=rule.owner,
                        payload=payload,
                        created_at=self.clock.now_us(),
                        delivery=SinkDelivery(sink=dict(sink)),
                    )
                )
        return notifications

    async def dispatch(self, notification: Notification) -> Notification:
        """Deliver one notification to its sink; failures never raise."""
        sink = notification.delivery.sink
        if sink.get("kind") == "inbox":
            notification.delivery.state = "delivered"
            notification.delivery.attempts = 1
            self._inbox.append(notification)
            self._save_inbox()
            return notification
        url = sink["url"]
        backoff = WEBHOOK_BACKOFF_S
        for attempt in range(1, WEBHOOK_ATTEMPTS + 1):
            notification.delivery.attempts = attempt
            try:
                status = await self._post(url, notification.payload)
                if 200 <= status < 300:
                    notification.delivery.state = "delivered"
                    notification.delivery.error = None
                    return notification
                notification.delivery.error = f"HTTP {status}"
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                notification.delivery.error = str(exc)
            if attempt < WEBHOOK_ATTEMPTS:
                await self.clock.sleep(backoff)
                backoff *= 2
        notification.delivery.state = "failed"
        notification.delivery.error = str(
            SinkUnreachable(f"{url}: {notification.delivery.error}")
        )
        return notification

    async def handle(self, event) -> list[Notification]:
        """Evaluate and deliver; the everyday entry point."""
        notifications = self.evaluate(event)
        for notification in notifications:
            await self.dispatch(notification)
            for hook in self.on_notification:
                hook(notification)
        return notifications

    # -- inbox ---------------------------------------------------------------

    def inbox(self, owner: str | None = None, include_acknowledged: bool = False):
        return [
            n
            for n in self._inbox
            if (include_acknowledged or not n.acknowledged)
            and (owner is None or n.owner == owner)
        ]

    def ack(self, notification_id: str) -> bool:
        for n in self._inbox:
            if n.notification_id == notification_id and not n.acknowledged:
                n.acknowledged = True
                self._save_inbox()
                return True
        return False

    # -- persistence ---------------------------------------------------------

    def _save_json(self, name: str, doc) -> None:
        if not self._state_dir:
            return
        path = self._state_dir / name
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1))
        os.replace(tmp, path)

    def _save_inbox(self) -> None:
        self._save_json("inbox.json", [n.to_dict() for n in self._inbox])

    def _save_rules(self) -> None:
        self._save_json("rules.json", {"rules": [r.to_dict() for r in self.rules()]})

    def _load(self) -> None:
        rules_path = self._state_dir / "rules.json"
        if rules_path.exists():
            doc = json.loads(rules_path.read_text())
            for entry in doc.get("rules", []):
                rule = AlertRule.from_dict(entry)
                self._rules[rule.rule_id] = rule
        inbox_path = self._state_dir / "inbox.json"
        if inbox_path.exists():
            self._inbox = [
                Notification.from_dict(d) for d in json.loads(inbox_path.read_text())
            ]
