"""Dump scheduler: cadence, window naming, buffering, atomicity."""

import asyncio
import io
import os

import pytest

from routelens.clock import SteppedClock, settle
from routelens.mrt.codec import (
    MRT_TABLE_DUMP_V2,
    TD2_PEER_INDEX,
    extract_bgp_octets,
    read_records,
    rib_file_name,
    update_file_name,
)
from routelens.rce.dumper import DumpScheduler
from routelens.rce.rib import Rib
from routelens.rce.session import InboundMessage
from routelens.wire.messages import (
    Attribute,
    KeepaliveMessage,
    PathAttributes,
    UpdateMessage,
    decode_message,
    encode_message,
)
from routelens.wire.prefix import Prefix

pytestmark = pytest.mark.anyio

T0 = 1_700_000_000


def make_update(n: int) -> UpdateMessage:
    return UpdateMessage(
        withdrawn=(),
        path_attributes=PathAttributes((
            Attribute.origin(0),
            Attribute.as_path(((2, (65010, 64600 + n)),)),
            Attribute.next_hop(bytes([10, 0, 0, 1])),
        )),
        nlri=(Prefix.parse(f"10.{n % 200}.0.0/16"),),
    )


def inbound(msg, received_at_us, feeder_id="sim-a") -> InboundMessage:
    octets = encode_message(msg)
    return InboundMessage(
        feeder_id=feeder_id, received_at=received_at_us, octets=octets,
        message=msg, peer_as=65010, peer_address=bytes([192, 0, 2, 7]),
        local_as=64512, local_address=bytes([192, 0, 2, 1]))


class DumperHarness:
    def __init__(self, tmp_path, **kw):
        self.clock = SteppedClock(float(T0))
        self.rib = Rib()
        self.dumper = DumpScheduler(self.rib, tmp_path / "archive", self.clock,
                                    **kw)
        self.task = None

    async def start(self):
        self.task = asyncio.create_task(self.dumper.run())
        await settle()
        return self

    async def advance(self, seconds):
        self.clock.advance(seconds)
        await settle(30)

    async def stop(self):
        self.dumper.stop()
        if self.task:
            self.task.cancel()
            try:
                await self.task
            except asyncio.CancelledError:
                pass

    def files(self):
        d = self.dumper.archive_dir
        return sorted(os.listdir(d)) if d.exists() else []


async def test_update_file_written_at_window_close_named_by_start(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300).start()
    try:
        h.dumper.add(inbound(make_update(1), (T0 + 10) * 1_000_000))
        await h.advance(299)
        assert h.files() == []
        await h.advance(2)
        assert h.files() == [update_file_name(T0)]
        data = (h.dumper.archive_dir / update_file_name(T0)).read_bytes()
        recs = list(read_records(io.BytesIO(data)))
        assert len(recs) == 1
        octets, meta = extract_bgp_octets(recs[0])
        assert decode_message(octets)[0].nlri == (Prefix.parse("10.1.0.0/16"),)
        assert meta["peer_as"] == 65010
    finally:
        await h.stop()


async def test_six_hour_cadence_file_counts(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300, rib_interval=7200).start()
    try:
        # advance six hours in half-window steps to exercise boundary stacking
        for _ in range(6 * 3600 // 150):
            await h.advance(150)
        files = h.files()
        updates = [f for f in files if f.startswith("updates.")]
        ribs = [f for f in files if f.startswith("rib.")]
        assert len(updates) == 72
        assert len(ribs) == 3
        assert h.dumper.counters["update_files"] == 72
        assert h.dumper.counters["rib_files"] == 3
        # window names walk t0, t0+300, ... with no holes
        assert updates == sorted(update_file_name(T0 + 300 * k) for k in range(72))
        assert ribs == sorted(rib_file_name(T0 + 7200 * k) for k in (1, 2, 3))
    finally:
        await h.stop()


async def test_messages_partition_across_windows_exactly_once(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300).start()
    try:
        sent = []
        for k in range(3):           # three windows
            for i in range(20):
                ts = (T0 + 300 * k + 3 * i) * 1_000_000 + i
                msg = make_update(20 * k + i)
                sent.append(encode_message(msg))
                h.dumper.add(inbound(msg, ts))
            await h.advance(300)
        got = []
        for name in h.files():
            data = (h.dumper.archive_dir / name).read_bytes()
            for rec in read_records(io.BytesIO(data)):
                octets, _ = extract_bgp_octets(rec)
                got.append(octets)
        assert got == sent  # every message exactly once, in receipt order
    finally:
        await h.stop()


async def test_empty_windows_still_produce_files(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300).start()
    try:
        await h.advance(301)
        assert h.files() == [update_file_name(T0)]
        assert (h.dumper.archive_dir / update_file_name(T0)).stat().st_size == 0
    finally:
        await h.stop()


async def test_keepalives_never_buffered(tmp_path):
    h = await DumperHarness(tmp_path).start()
    try:
        h.dumper.add(inbound(KeepaliveMessage(), (T0 + 1) * 1_000_000))
        assert h.dumper.counters["records_buffered"] == 0
        h.dumper.add(inbound(make_update(1), (T0 + 2) * 1_000_000))
        assert h.dumper.counters["records_buffered"] == 1
    finally:
        await h.stop()


async def test_buffer_cap_drops_oldest(tmp_path):
    h = await DumperHarness(tmp_path, buffer_cap=10).start()
    try:
        for i in range(15):
            h.dumper.add(inbound(make_update(i), (T0 + i) * 1_000_000))
        assert h.dumper.counters["buffer_drops"] == 5
        await h.advance(301)
        data = (h.dumper.archive_dir / update_file_name(T0)).read_bytes()
        kept = []
        for rec in read_records(io.BytesIO(data)):
            octets, _ = extract_bgp_octets(rec)
            kept.append(decode_message(octets)[0].nlri[0])
        # the five oldest were dropped
        assert kept == [Prefix.parse(f"10.{i}.0.0/16") for i in range(5, 15)]
    finally:
        await h.stop()


async def test_rib_dump_content_and_hook(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300, rib_interval=600).start()
    hooks = []
    h.dumper.on_rib_dump.append(hooks.append)
    h.dumper.peer_info = lambda fid: (bytes([10, 9, 9, 1]),
                                      bytes([192, 0, 2, 7]), 65010)
    try:
        for i in range(5):
            h.rib.feeder("sim-a").apply(make_update(i), (T0 + 1) * 1_000_000)
        for _ in range(4):
            await h.advance(150)
        name = rib_file_name(T0 + 600)
        assert name in h.files()
        assert hooks == [T0 + 600]
        data = (h.dumper.archive_dir / name).read_bytes()
        recs = list(read_records(io.BytesIO(data)))
        assert recs[0].type_code == MRT_TABLE_DUMP_V2
        assert recs[0].subtype == TD2_PEER_INDEX
        assert len(recs) == 1 + 5  # peer index + one per prefix
    finally:
        await h.stop()


async def test_updates_flushed_before_rib_at_shared_boundary(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300, rib_interval=600).start()
    order = []
    real_flush = h.dumper._flush_update_window
    real_rib = h.dumper._dump_rib

    def spy_flush(start, end):
        order.append(("updates", int(start)))
        real_flush(start, end)

    def spy_rib(ts):
        order.append(("rib", ts))
        real_rib(ts)

    h.dumper._flush_update_window = spy_flush
    h.dumper._dump_rib = spy_rib
    try:
        await h.advance(600.5)
        assert order == [("updates", T0), ("updates", T0 + 300), ("rib", T0 + 600)]
    finally:
        await h.stop()


async def test_catch_up_after_stall(tmp_path):
    # the loop sleeps once, then the clock jumps three windows at a time
    h = await DumperHarness(tmp_path, update_window=300).start()
    try:
        h.dumper.add(inbound(make_update(1), (T0 + 10) * 1_000_000))
        h.dumper.add(inbound(make_update(2), (T0 + 310) * 1_000_000))
        h.dumper.add(inbound(make_update(3), (T0 + 910) * 1_000_000))
        await h.advance(1200)   # single jump: 4 window closes due at once
        updates = [f for f in h.files() if f.startswith("updates.")]
        assert updates == sorted(update_file_name(T0 + 300 * k) for k in range(4))
        counts = []
        for name in updates:
            data = (h.dumper.archive_dir / name).read_bytes()
            counts.append(len(list(read_records(io.BytesIO(data)))))
        assert counts == [1, 1, 0, 1]
    finally:
        await h.stop()


async def test_no_tmp_files_left_behind(tmp_path):
    h = await DumperHarness(tmp_path, update_window=300).start()
    try:
        for k in range(8):
            h.dumper.add(inbound(make_update(k), (T0 + 300 * k + 5) * 1_000_000))
            await h.advance(300)
        assert not [f for f in h.files() if f.endswith(".tmp")]
    finally:
        await h.stop()
