"""MRT dump scheduler: periodic RIB snapshots and per-window update archives.

Cadence (collector start = t0):

* update files — one per ``update_window`` (default 300 s): window k covers
  ``[t0 + k·w, t0 + (k+1)·w)`` and is written at window close, named
  ``updates.<UTC stamp of window start>.mrt``.
* RIB files — a full TABLE_DUMP_V2 snapshot every ``rib_interval``
  (default 7200 s) at ``t0 + k·interval`` for k ≥ 1, named
  ``rib.<UTC stamp>.mrt``.

Inbound messages are buffered pre-encoded as MRT records; the buffer is
capped and drops oldest-first (counted) under sustained sink failure.
Files are written to a temp name and renamed, so a reader never observes a
partial file.  Every window produces a file, even an empty one, so archive
coverage has no holes.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Callable

from ..clock import Clock
from ..wire.messages import MSG_KEEPALIVE
from ..wire.prefix import Family
from ..mrt.codec import (
    PeerIndexEntry,
    RibSnapshotEntry,
    rib_file_name,
    update_file_name,
    write_rib_snapshot,
    write_update_dump,
)
from .rib import Rib
from .session import InboundMessage

log = logging.getLogger(__name__)

# peer info resolver: feeder_id -> (bgp_id 4B, peer address octets, peer AS)
PeerInfo = Callable[[str], tuple[bytes, bytes, int]]


def _default_peer_info(feeder_id: str) -> tuple[bytes, bytes, int]:
    return b"\x00\x00\x00\x00", b"\x00\x00\x00\x00", 0


class DumpScheduler:
    def __init__(
        self,
        rib: Rib,
        archive_dir: str | Path,
        clock: Clock,
        *,
        update_window: int = 300,
        rib_interval: int = 7200,
        buffer_cap: int = 100_000,
        peer_info: PeerInfo = _default_peer_info,
        collector_bgp_id: bytes = b"\x00\x00\x00\x00",
    ) -> None:
        self.rib = rib
        self.archive_dir = Path(archive_dir)
        self.clock = clock
        self.update_window = update_window
        self.rib_interval = rib_interval
        self.buffer_cap = buffer_cap
        self.peer_info = peer_info
        self.collector_bgp_id = collector_bgp_id
        self._buffer: list[tuple[int, bytes]] = []  # (received µs, encoded record)
        self.counters = {
            "update_files": 0,
            "rib_files": 0,
            "records_buffered": 0,
            "buffer_drops": 0,
            "sink_failures": 0,
        }
        self.on_rib_dump: list[Callable[[int], None]] = []
        self._running = False

    # -- intake -----------------------------------------------------------

    def add(self, inbound: InboundMessage) -> None:
        """Buffer one inbound message (KEEPALIVEs carry no archival value)."""
        if inbound.octets[18] == MSG_KEEPALIVE:
            return
        record = write_update_dump(
            inbound.octets,
            inbound.peer_as,
            inbound.peer_address,
            inbound.local_as,
            inbound.local_address,
            inbound.received_at // 1_000_000,
            inbound.received_at % 1_000_000,
        )
        if len(self._buffer) >= self.buffer_cap:
            self._buffer.pop(0)
            self.counters["buffer_drops"] += 1
        self._buffer.append((inbound.received_at, record))
        self.counters["records_buffered"] += 1

    # -- scheduling ---------------------------------------------------------

    async def run(self) -> None:
        """Dump loop; deadline cursors catch up after stalls or clock jumps."""
        self.archive_dir.mkdir(parents=True, exist_ok=True)
        t0 = self.clock.now()
        self._running = True
        next_update = t0 + self.update_window
        next_rib = t0 + self.rib_interval
        window_start = t0
        while self._running:
            deadline = min(next_update, next_rib)
            await self.clock.sleep(deadline - self.clock.now())
            now = self.clock.now()
            while next_update <= now:
                self._flush_update_window(window_start, next_update)
                window_start = next_update
                next_update += self.update_window
                if next_rib <= window_start:  # keep dump order: updates then RIB
                    self._dump_rib(int(next_rib))
                    next_rib += self.rib_interval
            while next_rib <= now:
                self._dump_rib(int(next_rib))
                next_rib += self.rib_interval

    def stop(self) -> None:
        self._running = False

    # -- writers -------------------------------------------------------------

    def _flush_update_window(self, start: float, end: float) -> None:
        end_us = int(end * 1_000_000)
        take = [rec for ts, rec in self._buffer if ts < end_us]
        self._buffer = [(ts, rec) for ts, rec in self._buffer if ts >= end_us]
        path = self.archive_dir / update_file_name(int(start))
        try:
            self._atomic_write(path, b"".join(take))
            self.counters["update_files"] += 1
        except OSError as exc:
            log.error("update dump failed, re-buffering %d records: %s", len(take), exc)
            self.counters["sink_failures"] += 1
            restored = [(end_us - 1, rec) for rec in take]
            self._buffer = restored + self._buffer
            overflow = len(self._buffer) - self.buffer_cap
            if overflow > 0:
                del self._buffer[:overflow]
                self.counters["buffer_drops"] += overflow

    def _dump_rib(self, ts: int) -> None:
        snapshots = self.rib.snapshots(timestamp=ts * 1_000_000)
        feeder_ids = [snap.feeder_id for snap in snapshots]
        peers = []
        for feeder_id in feeder_ids:
            bgp_id, addr, asn = self.peer_info(feeder_id)
            peers.append(PeerIndexEntry(bgp_id, addr, asn))
        index = {feeder_id: i for i, feeder_id in enumerate(feeder_ids)}

        merged: dict = {}
        for snap in snapshots:
            for entry in snap.entries():
                merged.setdefault(entry.prefix, []).append(
                    (index[entry.feeder_id], entry.received_at // 1_000_000, entry.attributes)
                )
        entries = []
        seq = {Family.IPV4: 0, Family.IPV6: 0}
        for prefix in sorted(merged, key=lambda p: (int(p.family), p.bits, p.length)):
            entries.append(RibSnapshotEntry(seq[prefix.family], prefix, tuple(merged[prefix])))
            seq[prefix.family] += 1

        path = self.archive_dir / rib_file_name(ts)
        try:
            blob = b"".join(write_rib_snapshot(entries, peers, ts, self.collector_bgp_id, b"routelens"))
            self._atomic_write(path, blob)
            self.counters["rib_files"] += 1
        except OSError as exc:
            log.error("RIB dump failed: %s", exc)
            self.counters["sink_failures"] += 1
            return
        for hook in self.on_rib_dump:
            hook(ts)

    @staticmethod
    def _atomic_write(path: Path, blob: bytes) -> None:
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)


async def run_dump_scheduler(rib: Rib, archive_dir: str | Path, clock: Clock, **kw) -> DumpScheduler:
    """Spec-shaped entry point: construct and run (caller owns the task)."""
    scheduler = DumpScheduler(rib, archive_dir, clock, **kw)
    await scheduler.run()
    return scheduler
