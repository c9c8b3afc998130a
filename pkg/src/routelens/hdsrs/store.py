"""Historic prefix/time re-index over MRT archives.

Raw archives answer "what happened in this file"; operators ask "what
happened to this prefix at this instant".  This store re-indexes archive
events into buckets keyed by ``(family, shard, UTC day)`` where the shard
is the first address octet (v4) or first two octets (v6), so answering a
query touches a handful of small directories regardless of archive size —
the handler cost depends on the result, not on history length.

Bucket layout on disk::

    <root>/manifest.json                     ingested file ids + coverage
    <root>/<family>/<shard>/<YYYY-MM-DD>/
        events.log      sorted JSON lines, one per announce/withdraw
        prefix.idx      binary per-prefix offset index into events.log
        boundary.snap   per-feeder state of the shard at 00:00 UTC
        manifest.json   per-bucket source bookkeeping

Prefixes shorter than the shard width (v4 /0–/7, v6 /0–/15) live in one
per-family ``coarse`` bucket; the query planner unions it with covered
shards, which keeps ingest single-placement (no fan-out, no cross-shard
dedup) while returning exactly the fan-out answer.

``prefix.idx`` is fixed-width sorted rows (address, length, event count,
offset-block position) followed by u64 byte offsets into ``events.log``.
Locating a prefix plus its first event is two binary searches and one
seek — which is what keeps lookup latency flat as the archive grows.

Day-boundary snapshots chain: ``boundary(next existing day) ==
last-write-wins replay of (boundary(day), events(day))``; reconstruction
loads one boundary, replays at most one day of matching events.
"""

from __future__ import annotations

import hashlib
import io
import ipaddress
import json
import os
import struct
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator

from ..mrt import codec as mrt
from ..wire.messages import BgpDecodeError, UpdateMessage, decode_message
from ..wire.prefix import Family, Prefix

COARSE = "coarse"
_IDX_MAGIC = b"RLPX\x00\x01\x00\x00"
_IDX_ROW = struct.Struct("!16sBxxxIQ")  # addr, length, pad, count, offset-block pos
_OFF = struct.Struct("!Q")


class StoreError(Exception):
    pass


class CorruptArchive(StoreError):
    pass


class BucketAbsent(StoreError):
    pass


class InstantNotCovered(StoreError):
    pass


def shard_of(prefix: Prefix) -> str:
    """Directory shard for a prefix: top octet(s) of the address, or coarse."""
    if prefix.family is Family.IPV4:
        if prefix.length < 8:
            return COARSE
        return f"{prefix.bits >> 120:03d}"
    if prefix.length < 16:
        return COARSE
    return f"{prefix.bits >> 112:05d}"


def _shard_width(family: Family) -> int:
    return 8 if family is Family.IPV4 else 16


def _day_of(ts_us: int) -> date:
    return datetime.fromtimestamp(ts_us / 1_000_000, tz=timezone.utc).date()


def _day_start_us(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp()) * 1_000_000


@dataclass(frozen=True, slots=True)
class BucketKey:
    family: Family
    shard: str
    day: date

    @property
    def relpath(self) -> str:
        fam = "ipv4" if self.family is Family.IPV4 else "ipv6"
        return f"{fam}/{self.shard}/{self.day.isoformat()}"


@dataclass(frozen=True, slots=True)
class IndexedEvent:
    timestamp: int  # µs
    feeder_id: str
    kind: str  # "announce" | "withdraw"
    prefix: Prefix
    attributes: dict | None  # canonical JSON form; None for withdraw
    source: tuple[str, int]  # (archive file id, record offset)

    @property
    def sort_key(self):
        return (self.timestamp, self.feeder_id, self.kind, str(self.prefix), self.source)


@dataclass(frozen=True, slots=True)
class HistoricEntry:
    feeder_id: str
    prefix: Prefix
    attributes: dict
    received_at: int  # µs

    @property
    def sort_key(self):
        return (self.prefix.length, self.prefix.bits, self.feeder_id)


@dataclass
class IngestReport:
    files: list[dict] = field(default_factory=list)
    events_indexed: int = 0
    duplicates_skipped: int = 0
    buckets_touched: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "files": self.files,
            "events_indexed": self.events_indexed,
            "duplicates_skipped": self.duplicates_skipped,
            "buckets_touched": self.buckets_touched,
            "warnings": self.warnings,
        }


def attrs_to_json(attrs) -> dict:
    """Canonical JSON rendering of path attributes for the event log."""
    out: dict = {}
    if attrs.origin is not None:
        out["origin"] = attrs.origin
    path = attrs.as_path
    if path is not None:
        out["as_path"] = [[kind, list(asns)] for kind, asns in path]
    nh = attrs.next_hop
    mp = attrs.mp_reach
    if mp is not None and mp.next_hop:
        nh = mp.next_hop
    if nh:
        out["next_hop"] = _render_next_hop(nh)
    if attrs.med is not None:
        out["med"] = attrs.med
    if attrs.local_pref is not None:
        out["local_pref"] = attrs.local_pref
    if attrs.communities is not None:
        out["communities"] = list(attrs.communities)
    return out


def _render_next_hop(nh: bytes) -> str:
    if len(nh) == 4:
        return str(ipaddress.IPv4Address(nh))
    if len(nh) == 16:
        return str(ipaddress.IPv6Address(nh))
    if len(nh) == 32:  # global + link-local pair
        return f"{ipaddress.IPv6Address(nh[:16])},{ipaddress.IPv6Address(nh[16:])}"
    return nh.hex()


# feeder identity resolver for archive records: (peer_as, peer address text) -> feeder id
FeederResolver = Callable[[int, str], str]


def default_feeder_resolver(peer_as: int, peer_address: str) -> str:
    return f"AS{peer_as}@{peer_address}"


def _addr_text(packed: bytes) -> str:
    return str(ipaddress.ip_address(packed))


class Store:
    def __init__(self, root: str | Path, feeder_resolver: FeederResolver = default_feeder_resolver) -> None:
        self.root = Path(root)
        self.feeder_resolver = feeder_resolver
        self._idx_cache: dict[Path, dict[tuple[int, int], list[int]]] = {}

    # ------------------------------------------------------------------
    # manifest

    def _manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def _load_manifest(self) -> dict:
        try:
            with open(self._manifest_path(), "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return {"files": {}, "coverage": None}

    def _save_manifest(self, manifest: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        _atomic_write_text(self._manifest_path(), json.dumps(manifest, indent=1, sort_keys=True))

    def coverage(self) -> tuple[int, int] | None:
        cov = self._load_manifest().get("coverage")
        return (cov[0], cov[1]) if cov else None

    # ------------------------------------------------------------------
    # ingest

    def ingest(self, paths: Iterable[str | Path]) -> IngestReport:
        report = IngestReport()
        manifest = self._load_manifest()
        pending: dict[BucketKey, list[IndexedEvent]] = {}
        min_ts: int | None = None
        max_ts: int | None = None

        for path in paths:
            path = Path(path)
            try:
                blob = path.read_bytes()
            except OSError as exc:
                report.files.append({"path": str(path), "status": "unreadable", "detail": str(exc)})
                continue
            file_id = hashlib.sha256(blob).hexdigest()[:16]
            known = manifest["files"].get(file_id)
            if known is not None:
                report.duplicates_skipped += known.get("events", 0)
                report.files.append({"path": str(path), "file_id": file_id, "status": "duplicate",
                                     "events": 0, "duplicates": known.get("events", 0)})
                continue
            try:
                events, warnings = self._extract_events(blob, file_id)
            except CorruptArchive as exc:
                report.files.append({"path": str(path), "file_id": file_id,
                                     "status": "corrupt", "detail": str(exc)})
                report.warnings.append(f"{path.name}: {exc}")
                continue
            for warning in warnings:
                report.warnings.append(f"{path.name}: {warning}")
            for event in events:
                pending.setdefault(BucketKey(event.prefix.family, shard_of(event.prefix),
                                             _day_of(event.timestamp)), []).append(event)
                if min_ts is None or event.timestamp < min_ts:
                    min_ts = event.timestamp
                if max_ts is None or event.timestamp > max_ts:
                    max_ts = event.timestamp
            manifest["files"][file_id] = {"name": path.name, "events": len(events)}
            report.files.append({"path": str(path), "file_id": file_id, "status": "indexed",
                                 "events": len(events), "duplicates": 0})
            report.events_indexed += len(events)

        touched_chains: dict[tuple[Family, str], date] = {}
        for key, events in sorted(pending.items(), key=lambda kv: kv[0].relpath):
            self._merge_bucket(key, events)
            report.buckets_touched += 1
            chain = (key.family, key.shard)
            if chain not in touched_chains or key.day < touched_chains[chain]:
                touched_chains[chain] = key.day
        for (family, shard), from_day in sorted(touched_chains.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])):
            self._recompute_boundaries(family, shard, from_day)

        if min_ts is not None:
            cov = manifest.get("coverage")
            manifest["coverage"] = (
                [min(cov[0], min_ts), max(cov[1], max_ts)] if cov else [min_ts, max_ts]
            )
        self._save_manifest(manifest)
        return report

    def _extract_events(self, blob: bytes, file_id: str) -> tuple[list[IndexedEvent], list[str]]:
        """Turn one archive file into indexable events.

        Update dumps contribute announce/withdraw events per UPDATE; RIB
        snapshots contribute announce events at the snapshot instant, which
        makes a later replay of (boundary, events) self-consistent whether
        coverage starts at a snapshot or mid-stream.
        """
        events: list[IndexedEvent] = []
        warnings: list[str] = []
        peers: list[mrt.PeerIndexEntry] = []
        last_ts = 0
        out_of_order = False
        offset = 0
        stream = io.BytesIO(blob)
        try:
            for record in mrt.read_records(stream):
                record_offset = offset
                offset = stream.tell()
                if record.type_code == mrt.MRT_TABLE_DUMP_V2:
                    if record.subtype == mrt.TD2_PEER_INDEX:
                        _, _, peers = mrt.parse_peer_index_table(record)
                        continue
                    if record.subtype in (mrt.TD2_RIB_V4, mrt.TD2_RIB_V6):
                        _, prefix, routes = mrt.parse_rib_record(record, peers)
                        ts = record.timestamp * 1_000_000
                        for peer, _originated, attrs in routes:
                            feeder = self.feeder_resolver(peer.peer_as, _addr_text(peer.peer_address))
                            events.append(IndexedEvent(ts, feeder, "announce", prefix,
                                                       attrs_to_json(attrs), (file_id, record_offset)))
                        continue
                    continue
                if record.type_code in (mrt.MRT_BGP4MP, mrt.MRT_BGP4MP_ET):
                    if record.subtype not in (mrt.BGP4MP_MESSAGE, mrt.BGP4MP_MESSAGE_AS4):
                        continue
                    octets, meta = mrt.extract_bgp_octets(record)
                    ts = record.timestamp_us
                    if ts < last_ts:
                        out_of_order = True
                    last_ts = ts
                    try:
                        message, _ = decode_message(octets, as4=meta["as4"])
                    except BgpDecodeError:
                        warnings.append(f"undecodable BGP message at offset {record_offset}")
                        continue
                    if not isinstance(message, UpdateMessage):
                        continue
                    feeder = self.feeder_resolver(meta["peer_as"], _addr_text(meta["peer_address"]))
                    attrs_json = attrs_to_json(message.path_attributes) if message.announced else None
                    for prefix in message.withdrawn_all:
                        events.append(IndexedEvent(ts, feeder, "withdraw", prefix, None,
                                                   (file_id, record_offset)))
                    for prefix in message.announced:
                        events.append(IndexedEvent(ts, feeder, "announce", prefix, attrs_json,
                                                   (file_id, record_offset)))
        except mrt.MrtError as exc:
            raise CorruptArchive(str(exc)) from exc
        if out_of_order:
            warnings.append("events out of timestamp order (indexed; sorted on write)")
        return events, warnings

    # ------------------------------------------------------------------
    # bucket files

    def _bucket_dir(self, key: BucketKey) -> Path:
        return self.root / key.relpath

    def _merge_bucket(self, key: BucketKey, new_events: list[IndexedEvent]) -> None:
        bucket = self._bucket_dir(key)
        bucket.mkdir(parents=True, exist_ok=True)
        existing = list(self._read_events(bucket))
        merged = existing + new_events
        merged.sort(key=lambda e: e.sort_key)
        self._write_bucket(bucket, merged)
        self._idx_cache.pop(bucket / "prefix.idx", None)

        mpath = bucket / "manifest.json"
        try:
            with open(mpath, "r", encoding="utf-8") as fh:
                bucket_manifest = json.load(fh)
        except FileNotFoundError:
            bucket_manifest = {"sources": {}, "events": 0}
        for event in new_events:
            src = bucket_manifest["sources"].setdefault(event.source[0], 0)
            bucket_manifest["sources"][event.source[0]] = src + 1
        bucket_manifest["events"] = len(merged)
        _atomic_write_text(mpath, json.dumps(bucket_manifest, sort_keys=True))

    def _write_bucket(self, bucket: Path, events: list[IndexedEvent]) -> None:
        lines: list[bytes] = []
        offsets: dict[tuple[int, int], list[int]] = {}
        position = 0
        for event in events:
            line = _event_to_line(event)
            offsets.setdefault((event.prefix.bits, event.prefix.length), []).append(position)
            lines.append(line)
            position += len(line)
        _atomic_write_bytes(bucket / "events.log", b"".join(lines))

        rows = sorted(offsets)
        blob = bytearray(_IDX_MAGIC)
        blob += struct.pack("!I", len(rows))
        block_pos = 0
        body = bytearray()
        for bits, length in rows:
            offs = offsets[(bits, length)]
            blob += _IDX_ROW.pack(bits.to_bytes(16, "big"), length, len(offs), block_pos)
            for off in offs:
                body += _OFF.pack(off)
            block_pos += len(offs) * _OFF.size
        _atomic_write_bytes(bucket / "prefix.idx", bytes(blob) + bytes(body))

    def _read_events(self, bucket: Path) -> Iterator[IndexedEvent]:
        try:
            with open(bucket / "events.log", "rb") as fh:
                for line in fh:
                    yield _event_from_line(line)
        except FileNotFoundError:
            return

    def _load_idx(self, bucket: Path) -> dict[tuple[int, int], list[int]]:
        path = bucket / "prefix.idx"
        cached = self._idx_cache.get(path)
        if cached is not None:
            return cached
        out: dict[tuple[int, int], list[int]] = {}
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            self._idx_cache[path] = out
            return out
        if blob[: len(_IDX_MAGIC)] != _IDX_MAGIC:
            raise CorruptArchive(f"bad index magic in {path}")
        (count,) = struct.unpack_from("!I", blob, len(_IDX_MAGIC))
        rows_off = len(_IDX_MAGIC) + 4
        block_base = rows_off + count * _IDX_ROW.size
        for i in range(count):
            addr, length, n, pos = _IDX_ROW.unpack_from(blob, rows_off + i * _IDX_ROW.size)
            start = block_base + pos
            offs = [_OFF.unpack_from(blob, start + j * _OFF.size)[0] for j in range(n)]
            out[(int.from_bytes(addr, "big"), length)] = offs
        self._idx_cache[path] = out
        return out

    # ------------------------------------------------------------------
    # day chains & boundaries

    def _shard_days(self, family: Family, shard: str) -> list[date]:
        fam = "ipv4" if family is Family.IPV4 else "ipv6"
        base = self.root / fam / shard
        days = []
        try:
            for name in os.listdir(base):
                try:
                    days.append(date.fromisoformat(name))
                except ValueError:
                    continue
        except FileNotFoundError:
            return []
        return sorted(days)

    def _family_shards(self, family: Family) -> list[str]:
        fam = "ipv4" if family is Family.IPV4 else "ipv6"
        try:
            return sorted(os.listdir(self.root / fam))
        except FileNotFoundError:
            return []

    def _load_boundary(self, bucket: Path) -> dict[tuple[str, str], tuple[dict | None, int]]:
        """(feeder, prefix text) -> (attrs, received µs) at the bucket's day start."""
        try:
            with open(bucket / "boundary.snap", "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            return {}
        return {(f, p): (a, t) for f, p, a, t in raw["state"]}

    def _save_boundary(self, bucket: Path, state: dict) -> None:
        rows = [[f, p, a, t] for (f, p), (a, t) in sorted(state.items())]
        _atomic_write_text(bucket / "boundary.snap", json.dumps({"state": rows}, sort_keys=True))

    def _recompute_boundaries(self, family: Family, shard: str, from_day: date) -> None:
        days = self._shard_days(family, shard)
        if not days:
            return
        state: dict = {}
        started = False
        for i, day in enumerate(days):
            bucket = self._bucket_dir(BucketKey(family, shard, day))
            if day >= from_day and not started:
                started = True
                if i == 0:
                    state = {}
                else:
                    prev = self._bucket_dir(BucketKey(family, shard, days[i - 1]))
                    state = dict(self._load_boundary(prev))
                    for event in self._read_events(prev):
                        _fold(state, event)
            if started:
                self._save_boundary(bucket, state)
                for event in self._read_events(bucket):
                    _fold(state, event)

    # ------------------------------------------------------------------
    # retrieval

    def locate(self, prefix: Prefix, instant_us: int) -> "BucketHandle":
        """Bucket handle for (prefix, instant); O(log) access to its events."""
        key = BucketKey(prefix.family, shard_of(prefix), _day_of(instant_us))
        bucket = self._bucket_dir(key)
        if not (bucket / "events.log").exists():
            raise BucketAbsent(key.relpath)
        return BucketHandle(key, bucket)

    def _mode_shards(self, prefix: Prefix, mode: str) -> list[str]:
        width = _shard_width(prefix.family)
        shards: set[str] = set()
        if mode in ("exact", "all"):
            shards.add(shard_of(prefix))
        if mode in ("more_specifics", "all"):
            if prefix.length >= width:
                shards.add(shard_of(prefix))
            else:
                # more-specifics still shorter than the shard width live in
                # coarse; the rest live in the shards the prefix covers
                shards.add(COARSE)
                top = prefix.bits >> (128 - prefix.length) if prefix.length else 0
                for name in self._family_shards(prefix.family):
                    if name == COARSE:
                        continue
                    if int(name) >> (width - prefix.length) == top:
                        shards.add(name)
        if mode in ("less_specifics", "all"):
            shards.add(COARSE)
            if prefix.length > width:
                shards.add(shard_of(prefix))
        return sorted(shards)

    @staticmethod
    def _relation_ok(mode: str, query: Prefix, candidate_bits: int, candidate_len: int) -> bool:
        if mode == "exact":
            return candidate_len == query.length and candidate_bits == query.bits
        if mode == "more_specifics":
            if candidate_len <= query.length:
                return False
            return _covers(query.bits, query.length, candidate_bits)
        if mode == "less_specifics":
            if candidate_len >= query.length:
                return False
            return _covers(candidate_bits, candidate_len, query.bits)
        return (
            Store._relation_ok("exact", query, candidate_bits, candidate_len)
            or Store._relation_ok("more_specifics", query, candidate_bits, candidate_len)
            or Store._relation_ok("less_specifics", query, candidate_bits, candidate_len)
        )

    def _bucket_matches(self, bucket: Path, prefix: Prefix, mode: str) -> list[int]:
        """events.log offsets (log order) of rows related to ``prefix``."""
        idx = self._load_idx(bucket)
        if not idx:
            return []
        offsets: list[int] = []
        if mode in ("exact", "all"):
            offsets.extend(idx.get((prefix.bits, prefix.length), ()))
        if mode in ("more_specifics", "all"):
            for (bits, length), offs in idx.items():
                if length > prefix.length and _covers(prefix.bits, prefix.length, bits):
                    offsets.extend(offs)
        if mode in ("less_specifics", "all"):
            for length in range(prefix.length):
                ancestor_bits = prefix.bits & _mask_bits(length)
                offsets.extend(idx.get((ancestor_bits, length), ()))
        return offsets

    def query_events(self, prefix: Prefix, mode: str, start_us: int, end_us: int) -> list[IndexedEvent]:
        """Time-ordered related events in the half-open range [start, end)."""
        out: list[IndexedEvent] = []
        day = _day_of(start_us)
        last_day = _day_of(max(start_us, end_us - 1))
        while day <= last_day:
            for shard in self._mode_shards(prefix, mode):
                bucket = self._bucket_dir(BucketKey(prefix.family, shard, day))
                offsets = self._bucket_matches(bucket, prefix, mode) if bucket.exists() else []
                if not offsets:
                    continue
                with open(bucket / "events.log", "rb") as fh:
                    for off in sorted(offsets):
                        fh.seek(off)
                        event = _event_from_line(fh.readline())
                        if start_us <= event.timestamp < end_us and self._relation_ok(
                            mode, prefix, event.prefix.bits, event.prefix.length
                        ):
                            out.append(event)
            day += timedelta(days=1)
        out.sort(key=lambda e: e.sort_key)
        return out

    def reconstruct_rib(
        self,
        prefix: Prefix,
        mode: str,
        at_us: int,
        feeders: Iterable[str] | None = None,
    ) -> list[HistoricEntry]:
        """Related table state as of ``at_us`` (inclusive)."""
        cov = self.coverage()
        if cov is None or not cov[0] <= at_us <= cov[1]:
            raise InstantNotCovered(f"instant {at_us} outside archive coverage {cov}")
        feeder_set = set(feeders) if feeders is not None else None
        day = _day_of(at_us)
        state: dict[tuple[str, str], tuple[dict | None, int]] = {}
        for shard in self._mode_shards(prefix, mode):
            days = self._shard_days(prefix.family, shard)
            base_days = [d for d in days if d <= day]
            if not base_days:
                continue
            base_day = base_days[-1]
            bucket = self._bucket_dir(BucketKey(prefix.family, shard, base_day))
            boundary = self._load_boundary(bucket)
            for (feeder, ptext), (attrs, ts) in boundary.items():
                cand = Prefix.parse(ptext)
                if self._relation_ok(mode, prefix, cand.bits, cand.length):
                    state[(feeder, ptext)] = (attrs, ts)
            # base_day < day means every event in the bucket predates at_us
            with open(bucket / "events.log", "rb") as fh:
                for off in sorted(self._bucket_matches(bucket, prefix, mode)):
                    fh.seek(off)
                    event = _event_from_line(fh.readline())
                    if event.timestamp <= at_us:
                        _fold_pair(state, event)
        out = []
        for (feeder, ptext), (attrs, ts) in state.items():
            if attrs is None:
                continue
            if feeder_set is not None and feeder not in feeder_set:
                continue
            out.append(HistoricEntry(feeder, Prefix.parse(ptext), attrs, ts))
        out.sort(key=lambda e: e.sort_key)
        return out


# ----------------------------------------------------------------------
# helpers


@dataclass(frozen=True, slots=True)
class BucketHandle:
    key: BucketKey
    path: Path

    def first_event_offset(self, prefix: Prefix) -> int | None:
        """Binary-search the on-disk index; O(log rows) reads, no full load."""
        with open(self.path / "prefix.idx", "rb") as fh:
            magic = fh.read(len(_IDX_MAGIC))
            if magic != _IDX_MAGIC:
                raise CorruptArchive(f"bad index magic in {self.path}")
            (count,) = struct.unpack("!I", fh.read(4))
            rows_off = len(_IDX_MAGIC) + 4
            target = (prefix.packed, prefix.length)
            lo, hi = 0, count - 1
            row = None
            while lo <= hi:
                mid = (lo + hi) // 2
                fh.seek(rows_off + mid * _IDX_ROW.size)
                addr, length, n, pos = _IDX_ROW.unpack(fh.read(_IDX_ROW.size))
                key = (addr, length)
                if key == target:
                    row = (n, pos)
                    break
                if key < target:
                    lo = mid + 1
                else:
                    hi = mid - 1
            if row is None:
                return None
            block_base = rows_off + count * _IDX_ROW.size
            fh.seek(block_base + row[1])
            return _OFF.unpack(fh.read(_OFF.size))[0]

    def first_event(self, prefix: Prefix) -> IndexedEvent | None:
        offset = self.first_event_offset(prefix)
        if offset is None:
            return None
        with open(self.path / "events.log", "rb") as fh:
            fh.seek(offset)
            return _event_from_line(fh.readline())


def _covers(cover_bits: int, cover_len: int, bits: int) -> bool:
    return (bits & _mask_bits(cover_len)) == cover_bits


def _mask_bits(length: int) -> int:
    return ((1 << 128) - 1) ^ ((1 << (128 - length)) - 1) if length < 128 else (1 << 128) - 1


def _event_to_line(event: IndexedEvent) -> bytes:
    row = {
        "t": event.timestamp,
        "f": event.feeder_id,
        "k": "A" if event.kind == "announce" else "W",
        "p": str(event.prefix),
        "a": event.attributes,
        "s": [event.source[0], event.source[1]],
    }
    return json.dumps(row, separators=(",", ":"), sort_keys=True).encode() + b"\n"


def _event_from_line(line: bytes) -> IndexedEvent:
    row = json.loads(line)
    return IndexedEvent(
        timestamp=row["t"],
        feeder_id=row["f"],
        kind="announce" if row["k"] == "A" else "withdraw",
        prefix=Prefix.parse(row["p"]),
        attributes=row["a"],
        source=(row["s"][0], row["s"][1]),
    )


def _fold(state: dict, event: IndexedEvent) -> None:
    key = (event.feeder_id, str(event.prefix))
    if event.kind == "announce":
        state[key] = (event.attributes, event.timestamp)
    else:
        state.pop(key, None)


def _fold_pair(state: dict, event: IndexedEvent) -> None:
    _fold(state, event)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))
