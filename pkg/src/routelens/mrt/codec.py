"""MRT archival record codec (RFC 6396).

Records share the common header::

    0                   31
    +--------------------+
    |     timestamp      |   u32 seconds, UTC
    +---------+----------+
    |  type   | subtype  |   u16 / u16
    +---------+----------+
    |       length       |   u32 octets following this header
    +--------------------+

Two record families are produced here:

* ``BGP4MP_ET`` (type 17) ``MESSAGE_AS4`` — one raw BGP message per record,
  with a 4-octet microsecond field after the header.  Per RFC 6396 §3 the
  declared length INCLUDES those 4 octets (some legacy readers subtract
  them; we write per RFC and read strictly).
* ``TABLE_DUMP_V2`` (type 13) — a PEER_INDEX_TABLE record followed by one
  RIB record per prefix.  IPv6 RIB entries store MP_REACH in the
  abbreviated form of §4.3.4 (next-hop length + next hop only); the
  structured reader re-expands it.

Record bodies are kept as raw octets so read→write round-trips are
byte-exact by construction; structured parsing is layered on top.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import BinaryIO, Iterable, Iterator

from ..wire.messages import (
    ATTR_MP_REACH,
    ATTR_MP_UNREACH,
    Attribute,
    PathAttributes,
    decode_attributes,
)
from ..wire.prefix import Family, Prefix

_HDR = struct.Struct("!IHHI")

MRT_TABLE_DUMP_V2 = 13
MRT_BGP4MP = 16
MRT_BGP4MP_ET = 17

TD2_PEER_INDEX = 1
TD2_RIB_V4 = 2
TD2_RIB_V6 = 4

BGP4MP_STATE_CHANGE = 0
BGP4MP_MESSAGE = 1
BGP4MP_MESSAGE_AS4 = 4
BGP4MP_STATE_CHANGE_AS4 = 5


class MrtError(ValueError):
    pass


class TruncatedRecord(MrtError):
    pass


class LengthMismatch(MrtError):
    pass


class WrongRecordType(MrtError):
    pass


class DanglingPeerIndex(MrtError):
    pass


@dataclass(frozen=True, slots=True)
class MrtRecord:
    timestamp: int
    type_code: int
    subtype: int
    body: bytes
    microseconds: int | None = None  # present iff the extended-timestamp variant

    def encode(self) -> bytes:
        if self.type_code == MRT_BGP4MP_ET:
            if self.microseconds is None:
                raise MrtError("extended-timestamp record without microseconds")
            return (
                _HDR.pack(self.timestamp, self.type_code, self.subtype, len(self.body) + 4)
                + struct.pack("!I", self.microseconds)
                + self.body
            )
        if self.microseconds is not None:
            raise MrtError("microseconds on a non-extended-timestamp record")
        return _HDR.pack(self.timestamp, self.type_code, self.subtype, len(self.body)) + self.body

    @property
    def timestamp_us(self) -> int:
        return self.timestamp * 1_000_000 + (self.microseconds or 0)


def read_records(stream: BinaryIO) -> Iterator[MrtRecord]:
    """Yield records off a byte stream; strict about declared lengths."""
    while True:
        header = stream.read(_HDR.size)
        if not header:
            return
        if len(header) < _HDR.size:
            raise TruncatedRecord("EOF inside a record header")
        ts, type_code, subtype, length = _HDR.unpack(header)
        body = stream.read(length)
        if len(body) < length:
            raise TruncatedRecord("EOF inside a record body")
        if type_code == MRT_BGP4MP_ET:
            if length < 4:
                raise LengthMismatch("extended-timestamp record shorter than its microsecond field")
            us = struct.unpack_from("!I", body)[0]
            yield MrtRecord(ts, type_code, subtype, body[4:], us)
        else:
            yield MrtRecord(ts, type_code, subtype, body)


def read_file(path) -> Iterator[MrtRecord]:
    with open(path, "rb") as fh:
        yield from read_records(fh)


# ---------------------------------------------------------------------------
# BGP4MP message records


def _addr_pair(peer_address: bytes, local_address: bytes) -> tuple[int, bytes]:
    if len(peer_address) != len(local_address):
        raise MrtError("peer and local address families differ")
    if len(peer_address) == 4:
        return 1, peer_address + local_address
    if len(peer_address) == 16:
        return 2, peer_address + local_address
    raise MrtError("addresses must be 4 or 16 octets")


def write_update_dump(
    message_octets: bytes,
    peer_as: int,
    peer_address: bytes,
    local_as: int,
    local_address: bytes,
    timestamp: int,
    microseconds: int = 0,
) -> bytes:
    """One BGP4MP_ET / MESSAGE_AS4 record wrapping a raw BGP message."""
    afi, addrs = _addr_pair(peer_address, local_address)
    body = struct.pack("!IIHH", peer_as, local_as, 0, afi) + addrs + message_octets
    return MrtRecord(timestamp, MRT_BGP4MP_ET, BGP4MP_MESSAGE_AS4, body, microseconds).encode()


def write_state_change(
    peer_as: int,
    peer_address: bytes,
    local_as: int,
    local_address: bytes,
    old_state: int,
    new_state: int,
    timestamp: int,
    microseconds: int = 0,
) -> bytes:
    afi, addrs = _addr_pair(peer_address, local_address)
    body = struct.pack("!IIHH", peer_as, local_as, 0, afi) + addrs + struct.pack("!HH", old_state, new_state)
    return MrtRecord(timestamp, MRT_BGP4MP_ET, BGP4MP_STATE_CHANGE_AS4, body, microseconds).encode()


def extract_bgp_octets(record: MrtRecord) -> tuple[bytes, dict]:
    """Raw BGP message octets + peer metadata from a BGP4MP message record."""
    if record.type_code not in (MRT_BGP4MP, MRT_BGP4MP_ET):
        raise WrongRecordType(f"type {record.type_code} carries no BGP message")
    body = record.body
    if record.subtype == BGP4MP_MESSAGE_AS4:
        if len(body) < 12:
            raise TruncatedRecord("BGP4MP_MESSAGE_AS4 header overrun")
        peer_as, local_as, _ifidx, afi = struct.unpack_from("!IIHH", body, 0)
        off = 12
    elif record.subtype == BGP4MP_MESSAGE:
        if len(body) < 8:
            raise TruncatedRecord("BGP4MP_MESSAGE header overrun")
        peer_as, local_as, _ifidx, afi = struct.unpack_from("!HHHH", body, 0)
        off = 8
    else:
        raise WrongRecordType(f"subtype {record.subtype} carries no BGP message")
    width = 4 if afi == 1 else 16
    if len(body) < off + 2 * width:
        raise TruncatedRecord("BGP4MP address fields overrun")
    peer_addr = body[off : off + width]
    local_addr = body[off + width : off + 2 * width]
    octets = body[off + 2 * width :]
    meta = {
        "peer_as": peer_as,
        "local_as": local_as,
        "peer_address": peer_addr,
        "local_address": local_addr,
        "afi": afi,
        "timestamp": record.timestamp,
        "microseconds": record.microseconds or 0,
        "as4": record.subtype == BGP4MP_MESSAGE_AS4,
    }
    return octets, meta


# ---------------------------------------------------------------------------
# TABLE_DUMP_V2 snapshots


@dataclass(frozen=True, slots=True)
class PeerIndexEntry:
    peer_bgp_id: bytes
    peer_address: bytes  # 4 or 16 octets
    peer_as: int

    def encode(self) -> bytes:
        peer_type = 0b10  # 4-octet AS always
        if len(self.peer_address) == 16:
            peer_type |= 0b01
        return bytes([peer_type]) + self.peer_bgp_id + self.peer_address + struct.pack("!I", self.peer_as)


@dataclass(frozen=True, slots=True)
class RibSnapshotEntry:
    sequence: int
    prefix: Prefix
    routes: tuple[tuple[int, int, PathAttributes], ...]  # (peer index, originated ts, attrs)


def _abbreviate_v6_attrs(attrs: PathAttributes) -> bytes:
    """RIB-entry attribute block: MP_REACH reduced to (nh_len, nh), MP_UNREACH dropped."""
    out = bytearray()
    for attr in attrs.attrs:
        if attr.type_code == ATTR_MP_UNREACH:
            continue
        if attr.type_code == ATTR_MP_REACH:
            mp = attrs.mp_reach
            if mp is None:  # already abbreviated or unparseable: pass through
                out += attr.encode()
            else:
                out += Attribute.build(ATTR_MP_REACH, bytes([len(mp.next_hop)]) + mp.next_hop).encode()
            continue
        out += attr.encode()
    return bytes(out)


def _plain_attrs(attrs: PathAttributes) -> bytes:
    out = bytearray()
    for attr in attrs.attrs:
        if attr.type_code in (ATTR_MP_REACH, ATTR_MP_UNREACH):
            continue
        out += attr.encode()
    return bytes(out)


def write_rib_snapshot(
    entries: Iterable[RibSnapshotEntry],
    peers: list[PeerIndexEntry],
    timestamp: int,
    collector_bgp_id: bytes = b"\x00\x00\x00\x00",
    view_name: bytes = b"",
) -> Iterator[bytes]:
    """Yield encoded records: PEER_INDEX_TABLE first, then one per prefix."""
    table = collector_bgp_id + struct.pack("!H", len(view_name)) + view_name
    table += struct.pack("!H", len(peers)) + b"".join(p.encode() for p in peers)
    yield MrtRecord(timestamp, MRT_TABLE_DUMP_V2, TD2_PEER_INDEX, table).encode()

    npeers = len(peers)
    for entry in entries:
        v6 = entry.prefix.family is Family.IPV6
        body = bytearray(struct.pack("!I", entry.sequence))
        body += entry.prefix.wire()
        body += struct.pack("!H", len(entry.routes))
        for peer_index, originated, attrs in entry.routes:
            if peer_index >= npeers:
                raise DanglingPeerIndex(f"peer index {peer_index} outside table of {npeers}")
            blob = _abbreviate_v6_attrs(attrs) if v6 else _plain_attrs(attrs)
            body += struct.pack("!HIH", peer_index, originated, len(blob)) + blob
        subtype = TD2_RIB_V6 if v6 else TD2_RIB_V4
        yield MrtRecord(timestamp, MRT_TABLE_DUMP_V2, subtype, bytes(body)).encode()


def parse_peer_index_table(record: MrtRecord) -> tuple[bytes, bytes, list[PeerIndexEntry]]:
    if record.type_code != MRT_TABLE_DUMP_V2 or record.subtype != TD2_PEER_INDEX:
        raise WrongRecordType("not a PEER_INDEX_TABLE record")
    body = record.body
    if len(body) < 8:
        raise TruncatedRecord("peer index table too short")
    collector_id = body[0:4]
    name_len = struct.unpack_from("!H", body, 4)[0]
    off = 6 + name_len
    if off + 2 > len(body):
        raise TruncatedRecord("view name overrun")
    view_name = body[6:off]
    count = struct.unpack_from("!H", body, off)[0]
    off += 2
    peers = []
    for _ in range(count):
        if off + 5 > len(body):
            raise TruncatedRecord("peer entry overrun")
        peer_type = body[off]
        bgp_id = body[off + 1 : off + 5]
        off += 5
        width = 16 if peer_type & 0b01 else 4
        as_width = 4 if peer_type & 0b10 else 2
        if off + width + as_width > len(body):
            raise TruncatedRecord("peer entry overrun")
        addr = body[off : off + width]
        off += width
        asn = int.from_bytes(body[off : off + as_width], "big")
        off += as_width
        peers.append(PeerIndexEntry(bgp_id, addr, asn))
    return collector_id, view_name, peers


def _expand_v6_attrs(blob: bytes, prefix: Prefix) -> PathAttributes:
    """Re-expand an abbreviated RIB attribute block into ordinary attributes."""
    attrs = decode_attributes(blob)
    rebuilt = []
    for attr in attrs.attrs:
        if attr.type_code == ATTR_MP_REACH and len(attr.value) >= 1:
            nh_len = attr.value[0]
            if len(attr.value) == 1 + nh_len:
                nh = attr.value[1 : 1 + nh_len]
                rebuilt.append(Attribute.mp_reach(prefix.family, nh, (prefix,)))
                continue
        rebuilt.append(attr)
    return PathAttributes(tuple(rebuilt))


def parse_rib_record(
    record: MrtRecord, peers: list[PeerIndexEntry]
) -> tuple[int, Prefix, list[tuple[PeerIndexEntry, int, PathAttributes]]]:
    if record.type_code != MRT_TABLE_DUMP_V2 or record.subtype not in (TD2_RIB_V4, TD2_RIB_V6):
        raise WrongRecordType("not a unicast RIB record")
    family = Family.IPV4 if record.subtype == TD2_RIB_V4 else Family.IPV6
    body = record.body
    if len(body) < 5:
        raise TruncatedRecord("RIB record too short")
    sequence = struct.unpack_from("!I", body, 0)[0]
    prefix, off = Prefix.from_wire(family, body, 4)
    if off + 2 > len(body):
        raise TruncatedRecord("entry count overrun")
    count = struct.unpack_from("!H", body, off)[0]
    off += 2
    routes = []
    for _ in range(count):
        if off + 8 > len(body):
            raise TruncatedRecord("RIB entry overrun")
        peer_index, originated, attr_len = struct.unpack_from("!HIH", body, off)
        off += 8
        if off + attr_len > len(body):
            raise TruncatedRecord("RIB entry attributes overrun")
        if peer_index >= len(peers):
            raise DanglingPeerIndex(f"peer index {peer_index} outside table of {len(peers)}")
        blob = body[off : off + attr_len]
        off += attr_len
        if family is Family.IPV6:
            attrs = _expand_v6_attrs(blob, prefix)
        else:
            attrs = decode_attributes(blob)
        routes.append((peers[peer_index], originated, attrs))
    if off != len(body):
        raise LengthMismatch("RIB record has trailing octets")
    return sequence, prefix, routes


# ---------------------------------------------------------------------------
# archive file naming


def _stamp(ts: int) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return dt.strftime("%Y%m%d.%H%M")


def update_file_name(window_start: int) -> str:
    return f"updates.{_stamp(window_start)}.mrt"


def rib_file_name(ts: int) -> str:
    return f"rib.{_stamp(ts)}.mrt"
