"""Scenario execution against a live collector.

One task walks the whole send agenda — session opens, initial tables,
keepalives, scripted actions, the closing NOTIFICATIONs — in timestamp
order, so the transcript (every message sent, with intended and actual
send times) is deterministic whenever the clock is.

Under a stepped clock the runner can drive time itself: a small driver
advances the clock to the next pending deadline whenever the agenda is
parked, giving real-I/O runs that still send at exact simulated instants.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..clock import Clock, SteppedClock, SystemClock, settle
from ..wire import messages as wire
from ..wire.messages import (
    KeepaliveMessage,
    NotificationMessage,
    OpenMessage,
    encode_message,
)
from ..wire.prefix import Prefix
from .scenario import FeederSpec, Scenario, build_announce, build_withdraw

CEASE_SHUTDOWN = (6, 2)  # administrative shutdown, sent on scripted close


class TargetRefused(Exception):
    """The collector address did not accept the TCP session."""


class SessionLostUnexpectedly(Exception):
    """The collector closed or rejected a session outside a scripted drop."""


@dataclass
class Transcript:
    """Everything the simulator sent, in send order."""

    entries: list[dict] = field(default_factory=list)
    session_events: list[dict] = field(default_factory=list)  # inbound diagnostics

    def record(self, feeder_id: str, kind: str, intended_us: int, actual_us: int, **detail):
        entry = {
            "feeder": feeder_id,
            "kind": kind,
            "intended_us": intended_us,
            "actual_us": actual_us,
        }
        if detail:
            entry["detail"] = detail
        self.entries.append(entry)
        return entry

    def updates(self) -> list[dict]:
        return [e for e in self.entries if e["kind"] == "update"]

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry) + "\n")


class _SimFeeder:
    """One simulated feeder connection."""

    def __init__(self, spec: FeederSpec, target: tuple[str, int], clock: Clock):
        self.spec = spec
        self.target = target
        self.clock = clock
        self.reader: asyncio.StreamReader | None = None
        self.writer: asyncio.StreamWriter | None = None
        self._reader_task: asyncio.Task | None = None
        self._scripted_drop = False
        self.established = False
        self.negotiated_hold: int | None = None
        self.failure: Exception | None = None
        self.inbound: list[dict] = []

    async def connect(self) -> None:
        local = (self.spec.source, 0) if self.spec.source else None
        try:
            self.reader, self.writer = await asyncio.open_connection(
                self.target[0], self.target[1], local_addr=local
            )
        except OSError as exc:
            raise TargetRefused(f"{self.spec.feeder_id}: {self.target} refused: {exc}") from exc
        await self._handshake()
        self._scripted_drop = False
        self._reader_task = asyncio.ensure_future(self._drain_inbound())

    async def _read_message(self):
        buf = b""
        while True:
            need = wire.frame_length(buf) if len(buf) >= 19 else None
            if need is not None and len(buf) >= need:
                msg, _ = wire.decode_message(buf[:need])
                return msg, buf[need:]
            chunk = await self.reader.read(4096)
            if not chunk:
                raise SessionLostUnexpectedly(
                    f"{self.spec.feeder_id}: connection closed during handshake"
                )
            buf += chunk

    async def _handshake(self) -> None:
        self.writer.write(
            encode_message(
                OpenMessage.build(
                    self.spec.asn,
                    self.spec.hold_s,
                    bytes(int(b) for b in self.spec.bgp_id.split(".")),
                )
            )
        )
        await self.writer.drain()
        msg, rest = await self._read_message()
        if isinstance(msg, NotificationMessage):
            raise SessionLostUnexpectedly(
                f"{self.spec.feeder_id}: OPEN rejected ({msg.code},{msg.subcode})"
            )
        if not isinstance(msg, OpenMessage):
            raise SessionLostUnexpectedly(
                f"{self.spec.feeder_id}: expected OPEN, got kind {msg.kind}"
            )
        self.negotiated_hold = min(self.spec.hold_s, msg.hold_time)
        self.writer.write(encode_message(KeepaliveMessage()))
        await self.writer.drain()
        self.established = True
        # anything after the collector's OPEN (its KEEPALIVE, typically)
        # is handled by the inbound drain
        self._pending = rest

    async def _drain_inbound(self) -> None:
        buf = getattr(self, "_pending", b"")
        try:
            while True:
                need = wire.frame_length(buf) if len(buf) >= 19 else None
                if need is not None and len(buf) >= need:
                    msg, _ = wire.decode_message(buf[:need])
                    buf = buf[need:]
                    self.inbound.append({"feeder": self.spec.feeder_id, "kind": msg.kind})
                    if isinstance(msg, NotificationMessage) and not self._scripted_drop:
                        self.failure = SessionLostUnexpectedly(
                            f"{self.spec.feeder_id}: NOTIFICATION "
                            f"({msg.code},{msg.subcode}) from collector"
                        )
                        self.established = False
                        return
                    continue
                chunk = await self.reader.read(4096)
                if not chunk:
                    if not self._scripted_drop:
                        self.failure = SessionLostUnexpectedly(
                            f"{self.spec.feeder_id}: collector closed the session"
                        )
                    self.established = False
                    return
                buf += chunk
        except (ConnectionError, asyncio.CancelledError):
            self.established = False

    async def send(self, msg) -> None:
        if self.failure is not None:
            raise self.failure
        if not self.established or self.writer is None:
            raise SessionLostUnexpectedly(f"{self.spec.feeder_id}: session is not open")
        try:
            self.writer.write(encode_message(msg))
            await self.writer.drain()
        except ConnectionError as exc:
            raise SessionLostUnexpectedly(f"{self.spec.feeder_id}: send failed: {exc}") from exc

    async def drop(self) -> None:
        """Scripted abrupt close — no NOTIFICATION, as if the feeder died."""
        self._scripted_drop = True
        self.established = False
        if self._reader_task:
            self._reader_task.cancel()
            self._reader_task = None
        if self.writer is not None:
            self.writer.close()
            self.writer = None
            self.reader = None

    async def shutdown(self) -> None:
        """Graceful end-of-run close."""
        if self.established and self.writer is not None:
            try:
                self.writer.write(encode_message(NotificationMessage(*CEASE_SHUTDOWN)))
                await self.writer.drain()
            except ConnectionError:
                pass
        self._scripted_drop = True
        if self._reader_task:
            self._reader_task.cancel()
            self._reader_task = None
        if self.writer is not None:
            self.writer.close()
            self.writer = None


def _keepalive_schedule(
    spec: FeederSpec, scenario: Scenario, horizon_us: int
) -> tuple[list[int], list[tuple[int, int]]]:
    """Keepalive instants for one feeder, skipping scripted drop windows."""
    windows = []  # closed intervals the session is down: (drop_at, reopen_at|inf)
    opened_at = 0
    down_from = None
    for action in scenario.timeline:
        if action.feeder_id != spec.feeder_id:
            continue
        if action.action == "drop_session" and down_from is None:
            down_from = action.at_us
        elif action.action == "reopen_session" and down_from is not None:
            windows.append((down_from, action.at_us))
            down_from = None
    if down_from is not None:
        windows.append((down_from, horizon_us + 1))
    interval_us = max(1, spec.hold_s // 3) * 1_000_000
    out = []
    t = interval_us
    while t <= horizon_us:
        in_drop = any(a <= t < b for a, b in windows)
        if not in_drop:
            out.append(t)
        t += interval_us
    return out, windows


def _build_agenda(scenario: Scenario, horizon_us: int) -> list[tuple[int, int, str, object]]:
    """(at_us, seq, kind, payload) rows, sorted by time then insertion."""
    agenda: list[tuple[int, int, str, object]] = []
    seq = 0

    def add(at_us: int, kind: str, payload) -> None:
        nonlocal seq
        agenda.append((at_us, seq, kind, payload))
        seq += 1

    for spec in scenario.feeders:
        add(0, "connect", spec.feeder_id)
    for spec in scenario.feeders:
        for entry in spec.table:
            add(0, "announce", (spec.feeder_id, entry["prefix"], entry.get("attrs", {})))
    for action in scenario.timeline:
        payload = (action.feeder_id, str(action.prefix) if action.prefix else None, action.attrs or {})
        add(action.at_us, action.action, payload)
    for spec in scenario.feeders:
        kas, _windows = _keepalive_schedule(spec, scenario, horizon_us)
        for t in kas:
            add(t, "keepalive", spec.feeder_id)
    add(horizon_us, "shutdown", None)
    agenda.sort(key=lambda row: (row[0], row[1]))
    return agenda


class _Pacer:
    """Upper bound on how far the driver may advance simulated time.

    While the agenda task is busy with I/O (a handshake, a drain) it has no
    sleep parked on the clock, and an unconstrained driver would jump ahead
    to some unrelated timer, distorting the next send's timing.  The agenda
    task therefore publishes the instant of its next row as a ceiling.
    """

    def __init__(self) -> None:
        self.ceiling: float | None = None


async def _drive_stepped(clock: SteppedClock, stop: asyncio.Event, pacer: _Pacer) -> None:
    """Advance a stepped clock to each next deadline while the run is parked."""
    while not stop.is_set():
        await settle()
        bounds = [b for b in (clock.next_deadline(), pacer.ceiling) if b is not None]
        target = min(bounds) if bounds else None
        if target is None or target <= clock.now():
            await asyncio.sleep(0.001)  # real-time yield: waiting on I/O
            continue
        await asyncio.sleep(0.002)  # grace so in-flight I/O lands first
        if not stop.is_set():
            clock.jump_to(target)


async def run(
    scenario: Scenario,
    target: tuple[str, int],
    clock: Clock | None = None,
    auto_advance: bool | None = None,
    horizon_us: int | None = None,
) -> Transcript:
    """Execute a scenario against a listening collector.

    ``clock`` defaults from the scenario's clock mode.  ``auto_advance``
    (default: on for an internally created stepped clock) runs the
    deadline driver; pass False when the test harness steps time itself.
    ``horizon_us`` extends the run past the last timeline action, e.g. to
    keep sessions alive across dump boundaries.
    """
    own_clock = clock is None
    if clock is None:
        clock = SteppedClock() if scenario.clock_mode == "stepped" else SystemClock()
    if auto_advance is None:
        auto_advance = own_clock and isinstance(clock, SteppedClock)
    scale = 1.0
    if scenario.clock_mode == "accelerated" and scenario.accel_factor > 0:
        scale = 1.0 / scenario.accel_factor

    horizon = horizon_us if horizon_us is not None else scenario.horizon_us
    agenda = _build_agenda(scenario, horizon)
    transcript = Transcript()
    feeders = {spec.feeder_id: _SimFeeder(spec, target, clock) for spec in scenario.feeders}
    start_us = clock.now_us()

    stop = asyncio.Event()
    pacer = _Pacer()
    driver = asyncio.ensure_future(_drive_stepped(clock, stop, pacer)) if (
        auto_advance and isinstance(clock, SteppedClock)
    ) else None
    try:
        for at_us, _seq, kind, payload in agenda:
            pacer.ceiling = (start_us + int(at_us * scale)) / 1_000_000
            wait_s = (start_us + int(at_us * scale) - clock.now_us()) / 1_000_000
            if wait_s > 0:
                await clock.sleep(wait_s)
            intended = start_us + at_us
            if kind == "connect":
                feeder = feeders[payload]
                await feeder.connect()
                transcript.record(
                    payload, "open", intended, clock.now_us(),
                    hold=feeder.negotiated_hold,
                )
            elif kind in ("announce", "withdraw"):
                feeder_id, prefix_text, attrs = payload
                feeder = feeders[feeder_id]
                prefix = Prefix.parse(prefix_text)
                if kind == "announce":
                    msg = build_announce(prefix, attrs, feeder.spec.default_next_hop)
                else:
                    msg = build_withdraw(prefix)
                if feeder.failure is not None:
                    raise feeder.failure
                if not feeder.established:
                    transcript.record(
                        feeder_id, "skipped", intended, clock.now_us(),
                        action=kind, prefix=prefix_text, reason="session is down",
                    )
                    continue
                await feeder.send(msg)
                transcript.record(
                    feeder_id, "update", intended, clock.now_us(),
                    action=kind, prefix=prefix_text,
                )
            elif kind == "keepalive":
                feeder = feeders[payload]
                if feeder.failure is not None:
                    raise feeder.failure
                if feeder.established:
                    await feeder.send(KeepaliveMessage())
                    transcript.record(payload, "keepalive", intended, clock.now_us())
            elif kind == "drop_session":
                feeder_id = payload[0]
                await feeders[feeder_id].drop()
                transcript.record(feeder_id, "drop", intended, clock.now_us())
            elif kind == "reopen_session":
                feeder_id = payload[0]
                feeder = feeders[feeder_id]
                await feeder.connect()
                transcript.record(
                    feeder_id, "reopen", intended, clock.now_us(),
                    hold=feeder.negotiated_hold,
                )
            elif kind == "shutdown":
                for feeder_id in sorted(feeders):
                    feeder = feeders[feeder_id]
                    if feeder.failure is not None:
                        raise feeder.failure
                    was_open = feeder.established
                    await feeder.shutdown()
                    if was_open:
                        transcript.record(feeder_id, "close", intended, clock.now_us())
    finally:
        stop.set()
        if driver is not None:
            driver.cancel()
        for feeder in feeders.values():
            await feeder.shutdown()
        for feeder in feeders.values():
            transcript.session_events.extend(feeder.inbound)
    return transcript
