"""Streaming sessions: one multiplexed socket, many independent event feeds.

Every session is a numbered event stream over one of the service kinds.
The contract with clients:

* events carry a per-session ``seq`` starting at 1 with no gaps — a client
  that sees ``n`` has seen everything before ``n``;
* kinds that view state (table or matrix views, flow views, historic
  queries) open with a ``snapshot`` event before any ``delta``;
* fabric overload is surfaced, never hidden: when the session's channel
  drops messages the stream says so with a ``stat`` event and re-issues a
  snapshot so folded state is sound again;
* ``end`` is the last event a session ever emits.

Sessions own their dispatch-fabric footprint (a ``gw.<id>`` channel plus
filters) and release it on close — including abrupt socket loss.  Liveness
is heartbeat-based: any client frame counts; the reaper closes sessions
silent for two heartbeat intervals.
"""

from __future__ import annotations

import asyncio
import logging
import uuid
from typing import AsyncIterator, Callable

from ..mim.filters import FilterSpec
from ..services.alerts import Notification
from ..services.flow import (
    RollingRates,
    delta_rows,
    entry_row,
    portion_match,
    rtv_table,
    update_summary,
)
from ..services.historic import historic_rtv, historic_sr
from ..services.reach import ReachabilityTracker
from ..system import Collector
from ..wire.prefix import Prefix
from .schemas import (
    SESSION_KINDS,
    flap_payload,
    notification_payload,
    parse_instant,
    reach_change_payload,
    reach_row_payload,
)

log = logging.getLogger(__name__)

HEARTBEAT_S = 15.0
MISSED_HEARTBEATS = 2

RTV_MODES = ("exact", "more_specifics", "less_specifics", "all")


class GatewayError(Exception):
    """Base for request failures; ``http_status`` maps to the REST surface."""

    http_status = 500


class InvalidParameters(GatewayError):
    http_status = 400


class Unauthorized(GatewayError):
    http_status = 401


class NotFound(GatewayError):
    http_status = 404


class ServiceUnavailable(GatewayError):
    http_status = 503


class UnknownSession(NotFound):
    pass


def feeder_granted(grants: dict, feeder_id: str) -> bool:
    allowed = grants.get("feeders", ())
    return "*" in allowed or feeder_id in allowed


class Session:
    """One event stream; producers push, exactly one consumer drains."""

    def __init__(self, session_id: str, user: str, grants: dict, kind: str,
                 params: dict, clock) -> None:
        self.session_id = session_id
        self.user = user
        self.grants = grants
        self.kind = kind
        self.params = dict(params)
        self.clock = clock
        self.queue: asyncio.Queue = asyncio.Queue()
        self.seq = 0
        self.ended = False
        self.filter_ids: list[str] = []
        self.channel = None
        self.tasks: list[asyncio.Task] = []
        self.unsubscribe: list[Callable[[], None]] = []
        self.last_seen: float = clock.now()
        self.probe: Callable | None = None

    def emit(self, kind: str, payload: dict, *, received_at: int | None = None) -> None:
        if self.ended:
            return
        self.seq += 1
        self.queue.put_nowait({
            "session_id": self.session_id,
            "seq": self.seq,
            "kind": kind,
            "payload": payload,
        })
        if kind == "end":
            self.ended = True
        if self.probe is not None and received_at is not None:
            self.probe(self, kind, received_at, self.clock.now_us())

    def touch(self) -> None:
        self.last_seen = self.clock.now()

    async def next_event(self) -> dict:
        return await self.queue.get()

    async def events(self) -> AsyncIterator[dict]:
        """Drain until (and including) the ``end`` event."""
        while True:
            event = await self.queue.get()
            yield event
            if event["kind"] == "end":
                return


class SessionManager:
    """Opens, feeds, reconfigures, reaps, and closes sessions."""

    def __init__(self, collector: Collector, *, heartbeat_s: float = HEARTBEAT_S) -> None:
        self.collector = collector
        self.clock = collector.clock
        self.heartbeat_s = heartbeat_s
        self.sessions: dict[str, Session] = {}
        # test/measurement hook: (session, kind, received_at_us, emitted_at_us)
        self.emit_probe: Callable | None = None
        self._reaper: asyncio.Task | None = None

    # -- lifecycle ---------------------------------------------------------

    def _ensure_reaper(self) -> None:
        if self._reaper is None or self._reaper.done():
            self._reaper = asyncio.create_task(self._reap_loop(), name="gw-reaper")

    async def aclose(self) -> None:
        if self._reaper is not None:
            self._reaper.cancel()
            try:
                await self._reaper
            except (asyncio.CancelledError, Exception):
                pass
            self._reaper = None
        for session_id in list(self.sessions):
            await self.close(session_id, emit_end=False)

    async def _reap_loop(self) -> None:
        limit = self.heartbeat_s * MISSED_HEARTBEATS
        while True:
            await self.clock.sleep(self.heartbeat_s)
            now = self.clock.now()
            for session in list(self.sessions.values()):
                if now - session.last_seen > limit:
                    log.info("reaping silent session %s (%s)", session.session_id, session.kind)
                    await self.close(session.session_id, reason="heartbeat timeout")

    # -- open / close --------------------------------------------------------

    async def open(self, user: str, grants: dict, kind: str, params: dict) -> Session:
        if kind not in SESSION_KINDS:
            raise InvalidParameters(f"unknown session kind {kind!r}")
        self._ensure_reaper()
        session = Session(uuid.uuid4().hex[:12], user, grants, kind, params, self.clock)
        session.probe = self.emit_probe
        try:
            await self._build(session)
        except BaseException:
            await self._teardown(session)
            raise
        self.sessions[session.session_id] = session
        return session

    async def close(self, session_id: str, *, emit_end: bool = True,
                    reason: str = "closed") -> None:
        session = self.sessions.pop(session_id, None)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        await self._teardown(session)
        if emit_end and not session.ended:
            session.emit("end", {"reason": reason})
        session.ended = True

    async def reconfigure(self, session_id: str, params: dict) -> Session:
        """Swap a live session's parameters; the stream re-opens with a
        fresh snapshot under the same session id and continuing seq."""
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        if session.kind in ("HRTV", "HSR"):
            raise InvalidParameters("historic sessions are immutable")
        old_params = session.params
        await self._teardown(session)
        session.params = {**old_params, **params}
        try:
            await self._build(session)
        except BaseException:
            self.sessions.pop(session_id, None)
            if not session.ended:
                session.emit("end", {"reason": "reconfigure failed"})
            raise
        return session

    def touch(self, session_id: str) -> None:
        session = self.sessions.get(session_id)
        if session is not None:
            session.touch()

    async def _teardown(self, session: Session) -> None:
        for task in session.tasks:
            task.cancel()
        for task in session.tasks:
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        session.tasks = []
        for undo in session.unsubscribe:
            try:
                undo()
            except Exception:
                pass
        session.unsubscribe = []
        if session.channel is not None:
            self.collector.mim.close_channel(session.channel.channel_id)
            session.channel = None
        session.filter_ids = []

    # -- builders (validate, install filters, snapshot, spawn pump) ----------

    async def _build(self, session: Session) -> None:
        builder = {
            "BFV": self._open_bfv,
            "RTV": self._open_rtv,
            "SR": self._open_sr,
            "RFD": self._open_rfd,
            "HRTV": self._open_hrtv,
            "HSR": self._open_hsr,
            "alert-feed": self._open_alert_feed,
        }[session.kind]
        await builder(session)

    def _spawn(self, session: Session, coro) -> None:
        task = asyncio.create_task(coro, name=f"gw-{session.kind}-{session.session_id}")
        session.tasks.append(task)

    def _open_fabric(self, session: Session, filters: list[FilterSpec], capacity: int = 2048):
        mim = self.collector.mim
        channel = mim.open_channel(f"gw.{session.session_id}", capacity=capacity)
        session.channel = channel
        for spec in filters:
            mim.configure_filter(spec)
            session.filter_ids.append(spec.filter_id)
        return channel

    def _require_feeder(self, session: Session, feeder_id) -> str:
        if not feeder_id:
            raise InvalidParameters("params.feeder is required")
        feeder_id = str(feeder_id)
        configured = {c.feeder_id for c in self.collector.config.feeders}
        if feeder_id not in configured:
            raise NotFound(f"unknown feeder {feeder_id!r}")
        if not feeder_granted(session.grants, feeder_id):
            raise Unauthorized(f"no grant for feeder {feeder_id!r}")
        return feeder_id

    @staticmethod
    def _parse_prefix(params: dict, key: str = "prefix") -> Prefix:
        raw = params.get(key)
        if not raw:
            raise InvalidParameters(f"params.{key} is required")
        try:
            return Prefix.parse(str(raw))
        except ValueError as exc:
            raise InvalidParameters(f"bad prefix {raw!r}: {exc}") from exc

    @staticmethod
    def _parse_mode(params: dict) -> str:
        mode = params.get("mode", "exact")
        if mode not in RTV_MODES:
            raise InvalidParameters(f"mode must be one of {RTV_MODES}")
        return mode

    def _parse_range(self, params: dict) -> tuple[int, int]:
        try:
            start = parse_instant(params["from"])
            end = parse_instant(params["to"])
        except KeyError as exc:
            raise InvalidParameters(f"params.{exc.args[0]} is required") from exc
        except ValueError as exc:
            raise InvalidParameters(str(exc)) from exc
        if end <= start:
            raise InvalidParameters("empty range: to must be after from")
        return start, end

    def _check_coverage(self, at_us: int) -> None:
        cov = self.collector.store.coverage()
        if cov is None:
            raise NotFound("archive is empty — no historic coverage yet")
        if not cov[0] <= at_us <= cov[1]:
            raise NotFound(f"instant {at_us} outside archive coverage [{cov[0]}, {cov[1]}]")

    # BFV: every UPDATE a feeder sends, plus rolling message/prefix rates.

    async def _open_bfv(self, session: Session) -> None:
        feeder_id = self._require_feeder(session, session.params.get("feeder"))
        sid = session.session_id
        channel = self._open_fabric(session, [
            FilterSpec(f"gw.{sid}.v4", feeder_id, Prefix.parse("0.0.0.0/0"),
                       frozenset({"exact", "more_specifics"}), f"gw.{sid}"),
            FilterSpec(f"gw.{sid}.v6", feeder_id, Prefix.parse("::/0"),
                       frozenset({"exact", "more_specifics"}), f"gw.{sid}"),
        ])
        state = next(
            (s for s in self.collector.listener.session_states()
             if s["feeder_id"] == feeder_id),
            None,
        )
        rates = RollingRates()
        session.emit("snapshot", {
            "feeder": feeder_id,
            "session": state,
            "rates": rates.rates(self.clock.now_us()),
        })

        async def pump() -> None:
            while True:
                tagged = await channel.get()
                dropped = channel.take_drop_report()
                if dropped:
                    session.emit("stat", {"dropped": dropped})
                rates.observe(tagged.received_at,
                              len(tagged.update.announced) + len(tagged.update.withdrawn_all))
                payload = update_summary(tagged)
                payload["rates"] = rates.rates(tagged.received_at)
                session.emit("delta", payload, received_at=tagged.received_at)

        self._spawn(session, pump())

    # RTV: live table view of one feeder for a prefix portion.

    async def _open_rtv(self, session: Session) -> None:
        feeder_id = self._require_feeder(session, session.params.get("feeder"))
        portion = self._parse_prefix(session.params)
        mode = self._parse_mode(session.params)
        sid = session.session_id
        modes = frozenset(RTV_MODES[:3]) if mode == "all" else frozenset({mode})
        channel = self._open_fabric(session, [
            FilterSpec(f"gw.{sid}.0", feeder_id, portion, modes, f"gw.{sid}"),
        ])
        self.collector.rib.feeder(feeder_id)  # materialize quiet feeders

        def snapshot() -> None:
            session.emit("snapshot", {
                "feeder": feeder_id,
                "prefix": str(portion),
                "mode": mode,
                "table": rtv_table(self.collector.rib, feeder_id, portion, mode),
            })

        snapshot()

        async def pump() -> None:
            while True:
                tagged = await channel.get()
                dropped = channel.take_drop_report()
                if dropped:
                    # deltas were lost; say so and re-base the client
                    session.emit("stat", {"dropped": dropped})
                    snapshot()
                    continue
                if tagged.delta is None:
                    continue
                rows = delta_rows(tagged.delta, portion, mode)
                if rows:
                    session.emit("delta", {"feeder": feeder_id, "rows": rows},
                                 received_at=tagged.received_at)

        self._spawn(session, pump())

    # SR: longest-match reachability of one subnet across feeders.

    async def _open_sr(self, session: Session) -> None:
        prefix = self._parse_prefix(session.params)
        include_default = bool(session.params.get("include_default", True))
        feeders = session.params.get("feeders")
        configured = [c.feeder_id for c in self.collector.config.feeders]
        if feeders:
            unknown = sorted(set(feeders) - set(configured))
            if unknown:
                raise NotFound(f"unknown feeders {unknown}")
            watch = sorted(feeders)
        else:
            watch = configured
        sid = session.session_id
        channel = self._open_fabric(session, [
            FilterSpec(f"gw.{sid}.0", "*", prefix,
                       frozenset({"exact", "less_specifics"}), f"gw.{sid}"),
        ])
        tracker = ReachabilityTracker(
            self.collector.rib, prefix, watch,
            include_default=include_default, now=self.clock.now_us(),
        )
        session.emit("snapshot", {
            "prefix": str(prefix),
            "include_default": include_default,
            "rows": [reach_row_payload(r) for r in tracker.rows()],
        })

        async def pump() -> None:
            while True:
                tagged = await channel.get()
                dropped = channel.take_drop_report()
                if dropped:
                    session.emit("stat", {"dropped": dropped})
                    for feeder_id in watch:
                        change = tracker.refresh(feeder_id, tagged.received_at)
                        if change is not None:
                            session.emit("delta", reach_change_payload(change),
                                         received_at=tagged.received_at)
                    continue
                if tagged.feeder_id not in tracker.feeder_ids:
                    continue
                touched = tagged.update.announced + tagged.update.withdrawn_all
                if not any(p.covers(prefix) for p in touched):
                    continue
                change = tracker.refresh(tagged.feeder_id, tagged.received_at)
                if change is not None:
                    session.emit("delta", reach_change_payload(change),
                                 received_at=tagged.received_at)

        self._spawn(session, pump())

    # RFD: stream of emitted flap events, optionally narrowed.

    async def _open_rfd(self, session: Session) -> None:
        feeder_id = session.params.get("feeder")
        if feeder_id:
            feeder_id = self._require_feeder(session, feeder_id)
        portion = None
        if session.params.get("prefix"):
            portion = self._parse_prefix(session.params)
        mode = self._parse_mode(session.params)

        def on_flap(event) -> None:
            if feeder_id and event.feeder_id != feeder_id:
                return
            if not feeder_id and not feeder_granted(session.grants, event.feeder_id):
                return
            if portion is not None and not portion_match(event.prefix, portion, mode):
                return
            session.emit("alert", flap_payload(event), received_at=event.last_timestamp)

        hooks = self.collector.flap_hooks
        hooks.append(on_flap)
        session.unsubscribe.append(lambda: hooks.remove(on_flap))

    # HRTV / HSR: finite streams over the re-indexed archive.

    async def _open_hrtv(self, session: Session) -> None:
        feeder_id = self._require_feeder(session, session.params.get("feeder"))
        portion = self._parse_prefix(session.params)
        mode = self._parse_mode(session.params)
        start_us, end_us = self._parse_range(session.params)
        self._check_coverage(start_us)
        store = self.collector.store

        async def produce() -> None:
            try:
                result = await asyncio.to_thread(
                    historic_rtv, store, feeder_id, portion, mode, start_us, end_us
                )
            except Exception as exc:
                session.emit("error", {"message": str(exc)})
                session.emit("end", {"reason": "failed"})
                self.sessions.pop(session.session_id, None)
                return
            session.emit("snapshot", {
                "feeder": feeder_id,
                "prefix": str(portion),
                "mode": mode,
                "at": start_us,
                "table": result["table"],
            })
            for row in result["deltas"]:
                session.emit("delta", {"feeder": feeder_id, "rows": [row]})
            session.emit("end", {"reason": "range exhausted"})
            self.sessions.pop(session.session_id, None)

        self._spawn(session, produce())

    async def _open_hsr(self, session: Session) -> None:
        prefix = self._parse_prefix(session.params)
        include_default = bool(session.params.get("include_default", True))
        feeders = session.params.get("feeders")
        start_us, end_us = self._parse_range(session.params)
        self._check_coverage(start_us)
        store = self.collector.store

        async def produce() -> None:
            try:
                intervals = await asyncio.to_thread(
                    historic_sr, store, prefix, start_us, end_us,
                    feeders, include_default,
                )
            except Exception as exc:
                session.emit("error", {"message": str(exc)})
                session.emit("end", {"reason": "failed"})
                self.sessions.pop(session.session_id, None)
                return
            session.emit("snapshot", {
                "prefix": str(prefix),
                "from": start_us,
                "to": end_us,
                "intervals": {
                    feeder: [[a, b] for a, b in spans]
                    for feeder, spans in intervals.items()
                },
            })
            session.emit("end", {"reason": "range exhausted"})
            self.sessions.pop(session.session_id, None)

        self._spawn(session, produce())

    # alert-feed: the user's notifications as they fire.

    async def _open_alert_feed(self, session: Session) -> None:
        def on_notification(notification: Notification) -> None:
            if notification.owner != session.user:
                return
            session.emit("alert", notification_payload(notification))

        hooks = self.collector.engine.on_notification
        hooks.append(on_notification)
        session.unsubscribe.append(lambda: hooks.remove(on_notification))


async def serve_stream(
    manager: SessionManager,
    user: str,
    grants: dict,
    recv_json: Callable,
    send_json: Callable,
    *,
    heartbeat_s: float | None = None,
) -> None:
    """Drive one multiplexed client socket; transport-agnostic.

    ``recv_json``/``send_json`` are awaitables over JSON frames (a FastAPI
    WebSocket fits directly).  Returns when the client disconnects; every
    session opened on this socket is closed on the way out.
    """
    hb = heartbeat_s if heartbeat_s is not None else manager.heartbeat_s
    mine: dict[str, asyncio.Task] = {}
    send_lock = asyncio.Lock()

    async def send(frame: dict) -> None:
        async with send_lock:
            await send_json(frame)

    async def writer(session: Session) -> None:
        async for event in session.events():
            await send({"type": "event", **event})
        mine.pop(session.session_id, None)

    async def pinger() -> None:
        while True:
            await manager.clock.sleep(hb)
            await send({"type": "control", "op": "ping"})

    ping_task = asyncio.create_task(pinger())
    try:
        while True:
            frame = await recv_json()
            for session_id in list(mine):
                manager.touch(session_id)
            if not isinstance(frame, dict):
                await send({"type": "control", "op": "error", "message": "frames must be objects"})
                continue
            op = frame.get("op")
            if op == "open":
                try:
                    session = await manager.open(
                        user, grants, frame.get("kind", ""), frame.get("params", {})
                    )
                except GatewayError as exc:
                    await send({"type": "control", "op": "error", "message": str(exc)})
                    continue
                mine[session.session_id] = asyncio.create_task(writer(session))
                await send({
                    "type": "control", "op": "opened",
                    "session_id": session.session_id, "kind": session.kind,
                })
            elif op == "close":
                session_id = str(frame.get("session_id", ""))
                try:
                    await manager.close(session_id)
                except UnknownSession as exc:
                    await send({"type": "control", "op": "error", "message": str(exc)})
            elif op == "params":
                session_id = str(frame.get("session_id", ""))
                try:
                    await manager.reconfigure(session_id, frame.get("params", {}))
                except GatewayError as exc:
                    await send({"type": "control", "op": "error", "message": str(exc)})
                    continue
                await send({"type": "control", "op": "params-ok", "session_id": session_id})
            elif op == "ping":
                await send({"type": "control", "op": "pong"})
            elif op == "pong":
                pass  # liveness already touched above
            else:
                await send({"type": "control", "op": "error", "message": f"unknown op {op!r}"})
    finally:
        ping_task.cancel()
        for session_id, task in list(mine.items()):
            task.cancel()
            try:
                await manager.close(session_id, emit_end=False)
            except UnknownSession:
                pass
