"""Feeder session handshake, identification, hold timer, intake delivery."""

import asyncio

import pytest

from routelens.clock import SteppedClock, settle
from routelens.rce.config import FeederConfig
from routelens.rce.rib import Rib
from routelens.rce.session import Listener
from routelens.wire.messages import (
    KeepaliveMessage,
    NOTIF_BAD_PEER_AS,
    NOTIF_CEASE_COLLISION,
    NOTIF_HOLD_TIMER_EXPIRED,
    NotificationMessage,
    OpenMessage,
    UpdateMessage,
    encode_message,
    frame_length,
    decode_message,
    Attribute,
    PathAttributes,
)
from routelens.wire.prefix import Prefix

pytestmark = pytest.mark.anyio


class FeedClient:
    """Minimal scripted BGP speaker for driving the listener."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer
        self.buf = bytearray()

    @classmethod
    async def connect(cls, addr):
        reader, writer = await asyncio.open_connection(*addr)
        return cls(reader, writer)

    def send(self, msg):
        self.writer.write(encode_message(msg))

    async def open_session(self, my_as=65010, hold=90, bgp_id=b"\x0a\x09\x09\x01"):
        self.send(OpenMessage.build(my_as, hold, bgp_id))
        await self.writer.drain()

    async def read_message(self, timeout=2.0):
        while True:
            total = frame_length(self.buf)
            if total is not None and len(self.buf) >= total:
                raw = bytes(self.buf[:total])
                del self.buf[:total]
                msg, _ = decode_message(raw)
                return msg
            chunk = await asyncio.wait_for(self.reader.read(65536), timeout)
            if not chunk:
                return None
            self.buf += chunk

    async def establish(self, my_as=65010, hold=90):
        await self.open_session(my_as=my_as, hold=hold)
        opened = await self.read_message()
        assert isinstance(opened, OpenMessage), opened
        ka = await self.read_message()
        assert isinstance(ka, KeepaliveMessage), ka
        self.send(KeepaliveMessage())
        await self.writer.drain()

    def close(self):
        self.writer.close()


def sample_update():
    return UpdateMessage(
        withdrawn=(),
        path_attributes=PathAttributes((
            Attribute.origin(0),
            Attribute.as_path(((2, (65010, 64600)),)),
            Attribute.next_hop(bytes([10, 0, 0, 1])),
        )),
        nlri=(Prefix.parse("10.50.0.0/16"),),
    )


async def make_listener(configs=None, *, clock=None, intake=None):
    rib = Rib()
    inbox: list = []

    async def default_intake(inbound):
        inbox.append(inbound)

    listener = Listener(
        configs or [FeederConfig(feeder_id="sim-a", local_as=64512,
                                 expected_peer_as=65010)],
        ("127.0.0.1", 0), rib=rib, intake=intake or default_intake,
        clock=clock or SteppedClock(1_700_000_000.0))
    await listener.start()
    return listener, rib, inbox


async def wait_for(predicate, tries=200, delay=0.01):
    for _ in range(tries):
        if predicate():
            return True
        await asyncio.sleep(delay)
    return False


class TestHandshake:
    async def test_established_after_open_keepalive(self):
        listener, rib, _ = await make_listener()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            assert await wait_for(
                lambda: listener.session_states()[0]["phase"] == "Established")
            state = listener.session_states()[0]
            assert state["peer_as"] == 65010
            assert state["negotiated_hold_time"] == 90
            client.close()
        finally:
            await listener.stop()

    async def test_collector_open_carries_local_as(self):
        listener, _, _ = await make_listener()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.open_session()
            opened = await client.read_message()
            assert isinstance(opened, OpenMessage)
            assert opened.peer_as == 64512
            client.close()
        finally:
            await listener.stop()

    async def test_session_up_event_and_stale_mark_persists(self):
        # re-establishment must NOT clear the stale mark: the boundary purge
        # needs it to tell inherited entries from re-learned ones
        listener, rib, _ = await make_listener()
        events = listener.subscribe_events()
        rib.feeder("sim-a").mark_stale(1)
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            ev = await asyncio.wait_for(events.get(), 2)
            assert (ev.kind, ev.feeder_id) == ("session_up", "sim-a")
            assert rib.feeder("sim-a").published().stale_since == 1
            client.close()
        finally:
            await listener.stop()

    async def test_duplicate_feeder_ids_refused(self):
        cfgs = [FeederConfig(feeder_id="x", local_as=1),
                FeederConfig(feeder_id="x", local_as=2)]
        with pytest.raises(ValueError):
            Listener(cfgs, ("127.0.0.1", 0), rib=Rib(),
                     intake=lambda m: None, clock=SteppedClock())

    async def test_unacceptable_hold_time(self):
        listener, _, _ = await make_listener()
        events = listener.subscribe_events()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.open_session(hold=2)
            notif = await client.read_message()
            assert isinstance(notif, NotificationMessage)
            assert (notif.code, notif.subcode) == (2, 6)
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.kind == "open_rejected"
        finally:
            await listener.stop()


class TestIdentification:
    async def test_wrong_as_rejected(self):
        listener, _, _ = await make_listener()
        events = listener.subscribe_events()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.open_session(my_as=65099)
            notif = await client.read_message()
            assert isinstance(notif, NotificationMessage)
            assert (notif.code, notif.subcode) == NOTIF_BAD_PEER_AS
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.kind == "open_rejected"
            assert listener.session_states()[0]["phase"] == "Idle"
        finally:
            await listener.stop()

    async def test_allow_list_wins_over_as_match(self):
        # source-address config claims the connection even though the AS
        # number would match the other feeder; its stricter AS check then
        # rejects, proving precedence
        cfgs = [
            FeederConfig(feeder_id="by-addr", local_as=64512,
                         expected_peer_as=65020,
                         allowed_source_addresses=("127.0.0.1",)),
            FeederConfig(feeder_id="by-as", local_as=64512,
                         expected_peer_as=65010),
        ]
        listener, _, _ = await make_listener(cfgs)
        events = listener.subscribe_events()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.open_session(my_as=65010)
            notif = await client.read_message()
            assert isinstance(notif, NotificationMessage)
            assert (notif.code, notif.subcode) == NOTIF_BAD_PEER_AS
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.feeder_id == "by-addr"
        finally:
            await listener.stop()

    async def test_catch_all_accepts_unknown_as(self):
        cfgs = [
            FeederConfig(feeder_id="strict", local_as=64512,
                         expected_peer_as=65010),
            FeederConfig(feeder_id="any", local_as=64512),
        ]
        listener, _, _ = await make_listener(cfgs)
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish(my_as=64999)
            assert await wait_for(
                lambda: any(s["feeder_id"] == "any" and s["phase"] == "Established"
                            for s in listener.session_states()))
            client.close()
        finally:
            await listener.stop()

    async def test_collision_second_connection_refused(self):
        listener, _, _ = await make_listener()
        events = listener.subscribe_events()
        try:
            first = await FeedClient.connect(listener.bound_address)
            await first.establish()
            await asyncio.wait_for(events.get(), 2)  # session_up

            second = await FeedClient.connect(listener.bound_address)
            await second.open_session()
            notif = await second.read_message()
            assert isinstance(notif, NotificationMessage)
            assert (notif.code, notif.subcode) == NOTIF_CEASE_COLLISION
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.kind == "collision"
            # the original session is untouched
            assert listener.session_states()[0]["phase"] == "Established"
            first.close()
        finally:
            await listener.stop()


class TestEstablishedFlow:
    async def test_updates_reach_intake_with_metadata(self):
        clock = SteppedClock(1_700_000_000.0)
        listener, rib, inbox = await make_listener(clock=clock)
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            upd = sample_update()
            client.send(upd)
            client.send(upd)
            await client.writer.drain()
            assert await wait_for(lambda: len(inbox) >= 2)
            first = inbox[0]
            assert first.feeder_id == "sim-a"
            assert first.peer_as == 65010
            assert first.message is not None and first.message.kind == 2
            assert first.octets == encode_message(upd)
            assert first.received_at == clock.now_us()
            assert first.local_as == 64512
            client.close()
        finally:
            await listener.stop()

    async def test_keepalives_not_delivered_to_intake(self):
        listener, _, inbox = await make_listener()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            client.send(KeepaliveMessage())
            client.send(sample_update())
            await client.writer.drain()
            assert await wait_for(lambda: len(inbox) == 1)
            assert inbox[0].message.kind == 2
            client.close()
        finally:
            await listener.stop()

    async def test_disconnect_marks_rib_stale_and_fires_down_hooks(self):
        clock = SteppedClock(1_700_000_000.0)
        listener, rib, _ = await make_listener(clock=clock)
        downs = []
        listener.down_hooks.append(lambda fid, ts: downs.append((fid, ts)))
        events = listener.subscribe_events()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            await asyncio.wait_for(events.get(), 2)  # session_up
            client.close()
            assert await wait_for(
                lambda: rib.feeder("sim-a").published().stale_since is not None)
            assert downs == [("sim-a", clock.now_us())]
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.kind == "session_down"
        finally:
            await listener.stop()

    async def test_hold_timer_expiry_under_stepped_clock(self):
        clock = SteppedClock(1_700_000_000.0)
        listener, rib, _ = await make_listener(clock=clock)
        events = listener.subscribe_events()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish(hold=90)
            ev = await asyncio.wait_for(events.get(), 2)
            assert ev.kind == "session_up"

            got = None
            for _ in range(12):
                clock.advance(31)
                await settle(20)
                try:
                    ev = events.get_nowait()
                except asyncio.QueueEmpty:
                    continue
                got = ev
                break
            assert got is not None and got.kind == "hold_expired", got
            # peer sees collector keepalives, then the hold notification
            msgs = []
            while True:
                try:
                    msg = await client.read_message(timeout=0.5)
                except asyncio.TimeoutError:
                    break
                if msg is None:
                    break
                msgs.append(msg)
            notifs = [m for m in msgs if isinstance(m, NotificationMessage)]
            assert notifs and (notifs[-1].code, notifs[-1].subcode) == NOTIF_HOLD_TIMER_EXPIRED
            assert rib.feeder("sim-a").published().stale_since is not None
        finally:
            await listener.stop()

    async def test_garbage_frame_counts_parse_error(self):
        listener, _, inbox = await make_listener()
        try:
            client = await FeedClient.connect(listener.bound_address)
            await client.establish()
            # valid header, UPDATE type, but a body that cannot decode
            bad = bytes(16 * [0xFF]) + (25).to_bytes(2, "big") + b"\x02" + b"\xff" * 6
            client.writer.write(bad)
            await client.writer.drain()
            assert await wait_for(lambda: len(inbox) == 1)
            assert inbox[0].message is None
            assert inbox[0].octets == bad
            state = listener.session_states()[0]
            assert state["counters"]["parse_errors"] == 1
            client.close()
        finally:
            await listener.stop()
