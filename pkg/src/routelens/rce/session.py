"""Passive BGP speaker: feeder session acceptance and lifecycle.

The collector never originates routing traffic.  The only message kinds it
ever sends are OPEN (its half of the handshake), KEEPALIVE (liveness), and
NOTIFICATION (teardown); that passivity is structural — there is no code
path here that builds an UPDATE.

Handshake, accept side::

    peer connects        -> phase Connect, wait for the peer's OPEN
    OPEN received        -> identify feeder (source address, then AS),
                            validate, send our OPEN + KEEPALIVE -> OpenConfirm
    KEEPALIVE received   -> Established; updates flow to the intake

Feeders are identified at OPEN time because several share one listening
port: an allow-listed source address wins, then an ``expected_peer_as``
match, then a config with neither (catch-all).  A second connection for a
feeder that already has a live session is refused with Cease/collision.
"""

from __future__ import annotations

import asyncio
import ipaddress
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Iterable

from ..clock import Clock, SystemClock
from ..wire import messages as wire
from ..wire.messages import (
    BgpDecodeError,
    BgpMessage,
    KeepaliveMessage,
    NotificationMessage,
    OpenMessage,
    UpdateMessage,
    decode_message,
    encode_message,
    frame_length,
)
from .config import FeederConfig
from .rib import Rib

PHASE_IDLE = "Idle"
PHASE_CONNECT = "Connect"
PHASE_OPEN_SENT = "OpenSent"
PHASE_OPEN_CONFIRM = "OpenConfirm"
PHASE_ESTABLISHED = "Established"

_KIND_NAMES = {1: "OPEN", 2: "UPDATE", 3: "NOTIFICATION", 4: "KEEPALIVE"}

HANDSHAKE_TIMEOUT = 30.0


class SessionError(Exception):
    pass


class HoldTimerExpired(SessionError):
    pass


class OpenRejected(SessionError):
    pass


class CollisionDetected(SessionError):
    pass


@dataclass
class SessionState:
    feeder_id: str
    phase: str = PHASE_IDLE
    negotiated_hold_time: int = 0
    peer_as: int | None = None
    peer_bgp_id: bytes | None = None
    peer_address: str | None = None
    established_at: float | None = None
    counters: dict = field(default_factory=lambda: {
        "messages_in": {},      # kind name -> count
        "messages_out": {},     # kind name -> count (OPEN/KEEPALIVE/NOTIFICATION only)
        "octets_in": 0,
        "parse_errors": 0,
    })

    def note_in(self, kind: int, octets: int) -> None:
        name = _KIND_NAMES.get(kind, str(kind))
        self.counters["messages_in"][name] = self.counters["messages_in"].get(name, 0) + 1
        self.counters["octets_in"] += octets

    def note_out(self, kind: int) -> None:
        name = _KIND_NAMES.get(kind, str(kind))
        self.counters["messages_out"][name] = self.counters["messages_out"].get(name, 0) + 1

    def to_dict(self) -> dict:
        return {
            "feeder_id": self.feeder_id,
            "phase": self.phase,
            "negotiated_hold_time": self.negotiated_hold_time,
            "peer_as": self.peer_as,
            "peer_bgp_id": (".".join(str(b) for b in self.peer_bgp_id) if self.peer_bgp_id else None),
            "peer_address": self.peer_address,
            "established_at": self.established_at,
            "counters": {
                "messages_in": dict(self.counters["messages_in"]),
                "messages_out": dict(self.counters["messages_out"]),
                "octets_in": self.counters["octets_in"],
                "parse_errors": self.counters["parse_errors"],
            },
        }


@dataclass(frozen=True, slots=True)
class SessionEvent:
    kind: str  # session_up | session_down | open_rejected | collision | hold_expired
    feeder_id: str
    timestamp: int  # µs
    detail: str = ""


@dataclass(frozen=True, slots=True)
class InboundMessage:
    """One raw message off a feeder socket, tagged for archival and dispatch."""

    feeder_id: str
    received_at: int  # µs, stamped at the socket read that completed the frame
    octets: bytes
    message: BgpMessage | None  # None when the body failed to parse
    peer_as: int
    peer_address: bytes
    local_as: int
    local_address: bytes


Intake = Callable[[InboundMessage], Awaitable[None]]


class _Session:
    def __init__(self, listener: "Listener", reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter) -> None:
        self.listener = listener
        self.reader = reader
        self.writer = writer
        self.clock = listener.clock
        self.config: FeederConfig | None = None
        self.state = SessionState(feeder_id="?", phase=PHASE_CONNECT)
        self.as4 = False
        self.last_recv = self.clock.now()
        self.closed = False
        self.peer_ip: str = "?"
        self.peer_addr_packed = b"\x00\x00\x00\x00"
        self.local_addr_packed = b"\x00\x00\x00\x00"
        self._tasks: list[asyncio.Task] = []
        self._buf = bytearray()
        self._buf_ts = self.clock.now_us()

    # -- plumbing -------------------------------------------------------

    async def _send(self, msg: BgpMessage) -> None:
        if self.closed:
            return
        try:
            self.writer.write(encode_message(msg))
            await self.writer.drain()
            self.state.note_out(msg.kind)
        except (ConnectionError, RuntimeError):
            pass

    async def _teardown(self, event_kind: str, detail: str = "",
                        notify: tuple[int, int] | None = None) -> None:
        if self.closed:
            return
        self.closed = True
        if notify is not None:
            try:
                self.state.note_out(wire.MSG_NOTIFICATION)
                self.writer.write(encode_message(NotificationMessage(notify[0], notify[1])))
                await _drain_quietly(self.writer)
            except (ConnectionError, RuntimeError):
                pass
        try:
            self.writer.close()
        except Exception:
            pass
        for task in self._tasks:
            task.cancel()
        was_established = self.state.phase == PHASE_ESTABLISHED
        self.state.phase = PHASE_IDLE
        if self.config is not None:
            self.listener._session_closed(self, was_established)
            await self.listener._emit(SessionEvent(event_kind, self.config.feeder_id,
                                                   self.clock.now_us(), detail))

    # -- handshake ------------------------------------------------------

    async def run(self) -> None:
        peername = self.writer.get_extra_info("peername") or ("?", 0)
        sockname = self.writer.get_extra_info("sockname") or ("?", 0)
        self.peer_ip = peername[0]
        self.state.peer_address = self.peer_ip
        self.peer_addr_packed = _pack_ip(peername[0])
        self.local_addr_packed = _pack_ip(sockname[0])
        try:
            await self._handshake()
            if self.state.phase == PHASE_ESTABLISHED:
                await self._established_loop()
        except (ConnectionError, asyncio.IncompleteReadError):
            await self._teardown("session_down", "connection lost")
        except asyncio.CancelledError:
            await self._teardown("session_down", "listener shut down")
            raise

    async def _read_message(self) -> tuple[BgpMessage | None, bytes, int]:
        """Read one full frame; returns (parsed-or-None, raw octets, receipt µs)."""
        buf = self._buf
        while True:
            total = frame_length(buf)
            if total is not None and len(buf) >= total:
                raw = bytes(buf[:total])
                del buf[:total]
                ts = self._buf_ts
                self.last_recv = self.clock.now()
                kind = raw[18]
                self.state.note_in(kind, len(raw))
                try:
                    msg, _ = decode_message(raw, as4=self.as4)
                except BgpDecodeError:
                    self.state.counters["parse_errors"] += 1
                    msg = None
                return msg, raw, ts
            chunk = await self.reader.read(65536)
            if not chunk:
                raise ConnectionResetError("peer closed")
            self._buf_ts = self.clock.now_us()
            buf += chunk

    async def _handshake(self) -> None:
        self._buf = bytearray()
        self._buf_ts = self.clock.now_us()
        watchdog = asyncio.ensure_future(self._handshake_watchdog())
        try:
            # the peer speaks first: its OPEN identifies the feeder
            try:
                msg, raw, _ = await self._read_message()
            except BgpDecodeError:
                self.state.phase = PHASE_IDLE
                await self._send(NotificationMessage(*wire.NOTIF_MSG_HEADER_ERROR))
                self.writer.close()
                self.closed = True
                return
            if not isinstance(msg, OpenMessage):
                self.writer.close()
                self.closed = True
                return
            config = self.listener._identify(self.peer_ip, msg.peer_as)
            if config is None:
                self.state.note_out(wire.MSG_NOTIFICATION)
                self.writer.write(encode_message(NotificationMessage(*wire.NOTIF_BAD_PEER_AS)))
                await _drain_quietly(self.writer)
                self.writer.close()
                self.closed = True
                await self.listener._emit(SessionEvent(
                    "open_rejected", "?", self.clock.now_us(),
                    f"no feeder config matches source {self.peer_ip} AS {msg.peer_as}"))
                return
            self.config = config
            self.state.feeder_id = config.feeder_id
            if config.expected_peer_as is not None and msg.peer_as != config.expected_peer_as:
                self.closed = True
                self.state.note_out(wire.MSG_NOTIFICATION)
                self.writer.write(encode_message(NotificationMessage(*wire.NOTIF_BAD_PEER_AS)))
                await _drain_quietly(self.writer)
                self.writer.close()
                await self.listener._emit(SessionEvent(
                    "open_rejected", config.feeder_id, self.clock.now_us(),
                    f"peer AS {msg.peer_as} != expected {config.expected_peer_as}"))
                return
            if not self.listener._claim(config.feeder_id, self):
                self.closed = True
                self.state.note_out(wire.MSG_NOTIFICATION)
                self.writer.write(encode_message(NotificationMessage(*wire.NOTIF_CEASE_COLLISION)))
                await _drain_quietly(self.writer)
                self.writer.close()
                await self.listener._emit(SessionEvent(
                    "collision", config.feeder_id, self.clock.now_us(),
                    "second connection while a session is live"))
                return

            if msg.hold_time in (1, 2):  # RFC: hold time must be 0 or >= 3
                await self._teardown("open_rejected", "unacceptable hold time", notify=(2, 6))
                return
            self.state.peer_as = msg.peer_as
            self.state.peer_bgp_id = msg.bgp_id
            self.as4 = msg.as4_capability is not None
            hold = min(config.hold_time_proposal, msg.hold_time) if msg.hold_time else 0
            self.state.negotiated_hold_time = hold

            self.state.phase = PHASE_OPEN_SENT
            await self._send(OpenMessage.build(config.local_as, config.hold_time_proposal,
                                               config.local_bgp_id_packed))
            await self._send(KeepaliveMessage())
            self.state.phase = PHASE_OPEN_CONFIRM

            msg2, _, _ = await self._read_message()
            if isinstance(msg2, NotificationMessage):
                await self._teardown("session_down", f"peer NOTIFICATION {msg2.code}/{msg2.subcode}")
                return
            if not isinstance(msg2, KeepaliveMessage):
                await self._teardown("session_down", "expected KEEPALIVE to confirm")
                return
            self.state.phase = PHASE_ESTABLISHED
            self.state.established_at = self.clock.now()
            # the stale mark from the previous session stays until the next
            # boundary purge: only entries older than the mark are evicted,
            # so anything this session re-announces survives it
            for hook in self.listener.up_hooks:
                hook(config.feeder_id, self.clock.now_us())
            await self.listener._emit(SessionEvent("session_up", config.feeder_id, self.clock.now_us()))
        finally:
            watchdog.cancel()

    async def _handshake_watchdog(self) -> None:
        deadline = self.clock.now() + HANDSHAKE_TIMEOUT
        while not self.closed and self.state.phase != PHASE_ESTABLISHED:
            remaining = deadline - self.clock.now()
            if remaining <= 0:
                await self._teardown("session_down", "handshake timeout")
                return
            await self.clock.sleep(remaining)

    # -- established ------------------------------------------------------

    async def _established_loop(self) -> None:
        assert self.config is not None
        hold = self.state.negotiated_hold_time
        if hold > 0:
            self._tasks.append(asyncio.ensure_future(self._keepalive_sender(max(1.0, hold / 3))))
            self._tasks.append(asyncio.ensure_future(self._hold_watchdog(hold)))
        config = self.config
        while not self.closed:
            try:
                msg, raw, ts = await self._read_message()
            except BgpDecodeError:
                await self._teardown("session_down", "framing error", notify=wire.NOTIF_MSG_HEADER_ERROR)
                return
            if isinstance(msg, KeepaliveMessage):
                continue
            if isinstance(msg, NotificationMessage):
                await self._teardown("session_down", f"peer NOTIFICATION {msg.code}/{msg.subcode}")
                return
            inbound = InboundMessage(
                feeder_id=config.feeder_id,
                received_at=ts,
                octets=raw,
                message=msg,
                peer_as=self.state.peer_as or 0,
                peer_address=self.peer_addr_packed,
                local_as=config.local_as,
                local_address=self.local_addr_packed,
            )
            await self.listener.intake(inbound)
            if isinstance(msg, OpenMessage):
                await self._teardown("session_down", "OPEN inside established session", notify=(5, 0))
                return

    async def _keepalive_sender(self, interval: float) -> None:
        next_send = self.clock.now() + interval
        while not self.closed:
            await self.clock.sleep(max(0.0, next_send - self.clock.now()))
            if self.closed:
                return
            if self.clock.now() >= next_send:
                await self._send(KeepaliveMessage())
                next_send += interval
                if next_send < self.clock.now():  # collapse catch-up bursts
                    next_send = self.clock.now() + interval

    async def _hold_watchdog(self, hold: float) -> None:
        while not self.closed:
            deadline = self.last_recv + hold
            remaining = deadline - self.clock.now()
            if remaining <= 0:
                await self._teardown("hold_expired", f"no message in {hold}s",
                                     notify=wire.NOTIF_HOLD_TIMER_EXPIRED)
                return
            await self.clock.sleep(remaining)


async def _drain_quietly(writer: asyncio.StreamWriter) -> None:
    try:
        await writer.drain()
    except (ConnectionError, RuntimeError):
        pass


def _pack_ip(text: str) -> bytes:
    try:
        return ipaddress.ip_address(text).packed
    except ValueError:
        return b"\x00\x00\x00\x00"


class Listener:
    """Accepts feeder connections on one bind address and runs their sessions.

    Session events stream from :meth:`events`; every inbound raw message is
    delivered (tagged) to the ``intake`` coroutine — the dispatch fabric's
    entry point.  The listener owns stale-marking on the RIB so table state
    tracks session health even with no consumer attached.
    """

    def __init__(
        self,
        configs: Iterable[FeederConfig],
        bind: tuple[str, int],
        *,
        rib: Rib,
        intake: Intake,
        clock: Clock | None = None,
    ) -> None:
        self.configs = list(configs)
        ids = [c.feeder_id for c in self.configs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate feeder_id in configs")
        self.bind = bind
        self.rib = rib
        self.intake = intake
        self.clock = clock or SystemClock()
        self.active: dict[str, _Session] = {}
        self._event_queues: list[asyncio.Queue] = []
        self._server: asyncio.AbstractServer | None = None
        self._session_tasks: set[asyncio.Task] = set()
        self.down_hooks: list[Callable[[str, int], None]] = []
        self.up_hooks: list[Callable[[str, int], None]] = []

    # -- lifecycle --------------------------------------------------------

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connect, self.bind[0], self.bind[1])

    @property
    def bound_address(self) -> tuple[str, int]:
        assert self._server is not None and self._server.sockets
        name = self._server.sockets[0].getsockname()
        return name[0], name[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._session_tasks):
            task.cancel()
        for task in list(self._session_tasks):
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass

    async def _on_connect(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = _Session(self, reader, writer)
        task = asyncio.current_task()
        if task is not None:
            self._session_tasks.add(task)
            task.add_done_callback(self._session_tasks.discard)
        await session.run()

    # -- feeder identification & bookkeeping ------------------------------

    def _identify(self, source_ip: str, peer_as: int) -> FeederConfig | None:
        by_addr = [c for c in self.configs if c.allows_source(source_ip)]
        if by_addr:
            return by_addr[0]
        constrained = [c for c in self.configs if c.allowed_source_addresses is None]
        by_as = [c for c in constrained if c.expected_peer_as == peer_as]
        if by_as:
            return by_as[0]
        catch_all = [c for c in constrained if c.expected_peer_as is None]
        return catch_all[0] if catch_all else None

    def _claim(self, feeder_id: str, session: _Session) -> bool:
        current = self.active.get(feeder_id)
        if current is not None and not current.closed:
            return False
        self.active[feeder_id] = session
        return True

    def _session_closed(self, session: _Session, was_established: bool) -> None:
        assert session.config is not None
        feeder_id = session.config.feeder_id
        if self.active.get(feeder_id) is session:
            del self.active[feeder_id]
            if was_established:
                now_us = self.clock.now_us()
                self.rib.feeder(feeder_id).mark_stale(now_us)
                for hook in self.down_hooks:
                    hook(feeder_id, now_us)

    # -- observation -------------------------------------------------------

    async def _emit(self, event: SessionEvent) -> None:
        for queue in self._event_queues:
            await queue.put(event)

    def subscribe_events(self) -> asyncio.Queue:
        queue: asyncio.Queue = asyncio.Queue()
        self._event_queues.append(queue)
        return queue

    def session_states(self) -> list[dict]:
        """Current phase/counters per configured feeder (Idle when no session)."""
        out = []
        for config in self.configs:
            session = self.active.get(config.feeder_id)
            if session is not None:
                out.append(session.state.to_dict())
            else:
                out.append(SessionState(feeder_id=config.feeder_id).to_dict())
        return out


async def run_listener(
    configs: Iterable[FeederConfig],
    bind: tuple[str, int],
    *,
    rib: Rib,
    intake: Intake,
    clock: Clock | None = None,
) -> Listener:
    """Start accepting feeder sessions; returns the running listener."""
    listener = Listener(configs, bind, rib=rib, intake=intake, clock=clock)
    await listener.start()
    return listener
