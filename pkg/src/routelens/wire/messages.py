"""BGP-4 message codec (RFC 4271 wire format, RFC 4760 multiprotocol NLRI).

Every message carries the 19-octet header::

    0 . . . . . . . . . . . . . . 15     16-octet marker, all ones
    +-------------------------------+
    |            marker             |
    +---------------+---------------+
    |    length     |     type      |    u16 total length (19..4096), u8 type
    +---------------+-------+-------+

Types: 1 OPEN, 2 UPDATE, 3 NOTIFICATION, 4 KEEPALIVE.

Fidelity rules that shape this module:

* Path attributes keep their *value octets* verbatim; structured views
  (origin, as_path, ...) are parsed on demand.  Re-encoding therefore
  reproduces the input octet-for-octet, including unknown or oddly
  flagged attributes.
* AS numbers are 4-octet everywhere in structured form.  Sessions that
  did not negotiate the 4-octet capability are decoded with ``as4=False``
  (paths widen on read; such messages are archival-read tolerance, not a
  byte-exact path).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .prefix import Family, Prefix, PrefixError

MARKER = b"\xff" * 16
HEADER_LEN = 19
MAX_MESSAGE = 4096

MSG_OPEN = 1
MSG_UPDATE = 2
MSG_NOTIFICATION = 3
MSG_KEEPALIVE = 4

ATTR_ORIGIN = 1
ATTR_AS_PATH = 2
ATTR_NEXT_HOP = 3
ATTR_MED = 4
ATTR_LOCAL_PREF = 5
ATTR_COMMUNITIES = 8
ATTR_MP_REACH = 14
ATTR_MP_UNREACH = 15

FLAG_OPTIONAL = 0x80
FLAG_TRANSITIVE = 0x40
FLAG_PARTIAL = 0x20
FLAG_EXT_LEN = 0x10

# canonical flag octet per structurally-known attribute
_CANON_FLAGS = {
    ATTR_ORIGIN: FLAG_TRANSITIVE,
    ATTR_AS_PATH: FLAG_TRANSITIVE,
    ATTR_NEXT_HOP: FLAG_TRANSITIVE,
    ATTR_MED: FLAG_OPTIONAL,
    ATTR_LOCAL_PREF: FLAG_TRANSITIVE,
    ATTR_COMMUNITIES: FLAG_OPTIONAL | FLAG_TRANSITIVE,
    ATTR_MP_REACH: FLAG_OPTIONAL,
    ATTR_MP_UNREACH: FLAG_OPTIONAL,
}

SEG_SET = 1
SEG_SEQUENCE = 2

ORIGIN_IGP = 0
ORIGIN_EGP = 1
ORIGIN_INCOMPLETE = 2

CAP_MULTIPROTOCOL = 1
CAP_AS4 = 65
AS_TRANS = 23456


class BgpDecodeError(ValueError):
    pass


class BadMarker(BgpDecodeError):
    pass


class Truncated(BgpDecodeError):
    pass


class UnknownType(BgpDecodeError):
    pass


class MalformedAttribute(BgpDecodeError):
    pass


class BadLength(BgpDecodeError):
    pass


class Oversize(ValueError):
    pass


# ---------------------------------------------------------------------------
# path attributes


@dataclass(frozen=True, slots=True)
class Attribute:
    """One path attribute: header flags + type code + exact value octets."""

    flags: int
    type_code: int
    value: bytes

    def encode(self) -> bytes:
        if self.flags & FLAG_EXT_LEN:
            return struct.pack("!BBH", self.flags, self.type_code, len(self.value)) + self.value
        if len(self.value) > 255:
            raise Oversize(f"attribute {self.type_code} needs extended length")
        return struct.pack("!BBB", self.flags, self.type_code, len(self.value)) + self.value

    # -- canonical builders --------------------------------------------

    @staticmethod
    def build(type_code: int, value: bytes, flags: int | None = None) -> "Attribute":
        if flags is None:
            flags = _CANON_FLAGS.get(type_code, FLAG_OPTIONAL | FLAG_TRANSITIVE)
        if len(value) > 255:
            flags |= FLAG_EXT_LEN
        return Attribute(flags, type_code, value)

    @staticmethod
    def origin(code: int) -> "Attribute":
        return Attribute.build(ATTR_ORIGIN, bytes([code]))

    @staticmethod
    def as_path(segments: tuple[tuple[int, tuple[int, ...]], ...], as4: bool = True) -> "Attribute":
        out = bytearray()
        fmt = "!I" if as4 else "!H"
        for seg_type, asns in segments:
            if not asns:
                raise ValueError("as_path segments must be non-empty")
            if len(asns) > 255:
                raise Oversize("more than 255 ASes in one path segment")
            out += bytes([seg_type, len(asns)])
            for asn in asns:
                out += struct.pack(fmt, asn)
        return Attribute.build(ATTR_AS_PATH, bytes(out))

    @staticmethod
    def next_hop(addr: bytes) -> "Attribute":
        if len(addr) != 4:
            raise ValueError("NEXT_HOP is a 4-octet IPv4 address")
        return Attribute.build(ATTR_NEXT_HOP, addr)

    @staticmethod
    def med(value: int) -> "Attribute":
        return Attribute.build(ATTR_MED, struct.pack("!I", value))

    @staticmethod
    def local_pref(value: int) -> "Attribute":
        return Attribute.build(ATTR_LOCAL_PREF, struct.pack("!I", value))

    @staticmethod
    def communities(values: tuple[int, ...]) -> "Attribute":
        return Attribute.build(ATTR_COMMUNITIES, b"".join(struct.pack("!I", v) for v in values))

    @staticmethod
    def mp_reach(family: Family, next_hop: bytes, prefixes: tuple[Prefix, ...]) -> "Attribute":
        body = struct.pack("!HBB", int(family), 1, len(next_hop)) + next_hop + b"\x00"
        body += b"".join(p.wire() for p in prefixes)
        return Attribute.build(ATTR_MP_REACH, body)

    @staticmethod
    def mp_unreach(family: Family, prefixes: tuple[Prefix, ...]) -> "Attribute":
        body = struct.pack("!HB", int(family), 1) + b"".join(p.wire() for p in prefixes)
        return Attribute.build(ATTR_MP_UNREACH, body)


def _parse_as_path(value: bytes, as4: bool) -> tuple[tuple[int, tuple[int, ...]], ...]:
    width = 4 if as4 else 2
    fmt = "!I" if as4 else "!H"
    segments = []
    off = 0
    while off < len(value):
        if off + 2 > len(value):
            raise MalformedAttribute("AS_PATH segment header overrun")
        seg_type, count = value[off], value[off + 1]
        if seg_type not in (SEG_SET, SEG_SEQUENCE) or count == 0:
            raise MalformedAttribute("bad AS_PATH segment")
        off += 2
        end = off + count * width
        if end > len(value):
            raise MalformedAttribute("AS_PATH segment body overrun")
        asns = tuple(struct.unpack_from(fmt, value, off + i * width)[0] for i in range(count))
        segments.append((seg_type, asns))
        off = end
    return tuple(segments)


def _parse_nlri_list(family: Family, buf: bytes) -> tuple[Prefix, ...]:
    out = []
    off = 0
    while off < len(buf):
        try:
            pfx, off = Prefix.from_wire(family, buf, off)
        except PrefixError as exc:
            raise MalformedAttribute(str(exc)) from exc
        out.append(pfx)
    return tuple(out)


@dataclass(frozen=True, slots=True)
class MpReach:
    family: Family
    safi: int
    next_hop: bytes
    prefixes: tuple[Prefix, ...]


@dataclass(frozen=True, slots=True)
class MpUnreach:
    family: Family
    safi: int
    prefixes: tuple[Prefix, ...]


def _parse_mp_reach(value: bytes) -> MpReach:
    if len(value) < 5:
        raise MalformedAttribute("MP_REACH too short")
    afi, safi, nh_len = struct.unpack_from("!HBB", value, 0)
    if afi not in (1, 2) or safi != 1:
        raise MalformedAttribute("unsupported AFI/SAFI")
    off = 4 + nh_len
    if off + 1 > len(value):
        raise MalformedAttribute("MP_REACH next hop overrun")
    next_hop = value[4:off]
    off += 1  # reserved SNPA count octet
    return MpReach(Family(afi), safi, next_hop, _parse_nlri_list(Family(afi), value[off:]))


def _parse_mp_unreach(value: bytes) -> MpUnreach:
    if len(value) < 3:
        raise MalformedAttribute("MP_UNREACH too short")
    afi, safi = struct.unpack_from("!HB", value, 0)
    if afi not in (1, 2) or safi != 1:
        raise MalformedAttribute("unsupported AFI/SAFI")
    return MpUnreach(Family(afi), safi, _parse_nlri_list(Family(afi), value[3:]))


class PathAttributes:
    """Ordered attribute list with lazily parsed structured views.

    Equality and hashing follow the exact wire content, so two attribute
    sets compare equal iff they would serialize identically.
    """

    __slots__ = ("attrs", "as4", "_views")

    def __init__(self, attrs: tuple[Attribute, ...] = (), as4: bool = True) -> None:
        self.attrs = tuple(attrs)
        self.as4 = as4
        self._views: dict[int, object] = {}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PathAttributes) and self.attrs == other.attrs and self.as4 == other.as4

    def __hash__(self) -> int:
        return hash((self.attrs, self.as4))

    def __repr__(self) -> str:
        return f"PathAttributes({[a.type_code for a in self.attrs]})"

    def __bool__(self) -> bool:
        return bool(self.attrs)

    def encode(self) -> bytes:
        return b"".join(a.encode() for a in self.attrs)

    def _find(self, type_code: int) -> Attribute | None:
        for a in self.attrs:
            if a.type_code == type_code:
                return a
        return None

    def _view(self, type_code: int, parser):
        if type_code in self._views:
            return self._views[type_code]
        attr = self._find(type_code)
        view = None
        if attr is not None:
            try:
                view = parser(attr.value)
            except (BgpDecodeError, struct.error):
                view = None  # value octets not parseable: exposed via .unknown
        self._views[type_code] = view
        return view

    @property
    def origin(self) -> int | None:
        return self._view(ATTR_ORIGIN, lambda v: v[0] if len(v) == 1 and v[0] <= 2 else _bad())

    @property
    def as_path(self) -> tuple[tuple[int, tuple[int, ...]], ...] | None:
        return self._view(ATTR_AS_PATH, lambda v: _parse_as_path(v, self.as4))

    @property
    def next_hop(self) -> bytes | None:
        return self._view(ATTR_NEXT_HOP, lambda v: v if len(v) == 4 else _bad())

    @property
    def med(self) -> int | None:
        return self._view(ATTR_MED, lambda v: struct.unpack("!I", v)[0] if len(v) == 4 else _bad())

    @property
    def local_pref(self) -> int | None:
        return self._view(ATTR_LOCAL_PREF, lambda v: struct.unpack("!I", v)[0] if len(v) == 4 else _bad())

    @property
    def communities(self) -> tuple[int, ...] | None:
        def parse(v: bytes):
            if len(v) % 4:
                _bad()
            return tuple(struct.unpack(f"!{len(v) // 4}I", v)) if v else ()

        return self._view(ATTR_COMMUNITIES, parse)

    @property
    def mp_reach(self) -> MpReach | None:
        return self._view(ATTR_MP_REACH, _parse_mp_reach)

    @property
    def mp_unreach(self) -> MpUnreach | None:
        return self._view(ATTR_MP_UNREACH, _parse_mp_unreach)

    @property
    def unknown(self) -> tuple[tuple[int, int, bytes], ...]:
        """(flags, type code, value octets) for attributes without a structured view."""
        out = []
        for a in self.attrs:
            if a.type_code == ATTR_ORIGIN and self.origin is not None:
                continue
            if a.type_code == ATTR_AS_PATH and self.as_path is not None:
                continue
            if a.type_code == ATTR_NEXT_HOP and self.next_hop is not None:
                continue
            if a.type_code == ATTR_MED and self.med is not None:
                continue
            if a.type_code == ATTR_LOCAL_PREF and self.local_pref is not None:
                continue
            if a.type_code == ATTR_COMMUNITIES and self.communities is not None:
                continue
            if a.type_code == ATTR_MP_REACH and self.mp_reach is not None:
                continue
            if a.type_code == ATTR_MP_UNREACH and self.mp_unreach is not None:
                continue
            out.append((a.flags, a.type_code, a.value))
        return tuple(out)

    def origin_as(self) -> tuple[int, ...]:
        """Candidate origin AS set: last AS of the path, or all members of a trailing SET."""
        path = self.as_path
        if not path:
            return ()
        seg_type, asns = path[-1]
        return (asns[-1],) if seg_type == SEG_SEQUENCE else tuple(sorted(set(asns)))


def _bad():
    raise MalformedAttribute("value octets inconsistent")


def decode_attributes(buf: bytes, as4: bool = True) -> PathAttributes:
    attrs = []
    off = 0
    n = len(buf)
    while off < n:
        if off + 3 > n:
            raise MalformedAttribute("attribute header overruns message")
        flags = buf[off]
        type_code = buf[off + 1]
        if flags & FLAG_EXT_LEN:
            if off + 4 > n:
                raise MalformedAttribute("extended length overruns message")
            length = (buf[off + 2] << 8) | buf[off + 3]
            off += 4
        else:
            length = buf[off + 2]
            off += 3
        if off + length > n:
            raise MalformedAttribute("attribute value overruns message")
        attrs.append(Attribute(flags, type_code, bytes(buf[off : off + length])))
        off += length
    return PathAttributes(tuple(attrs), as4=as4)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True, slots=True)
class BgpMessage:
    kind: int = field(init=False, default=0)


@dataclass(frozen=True, slots=True)
class OpenMessage(BgpMessage):
    version: int
    my_as: int  # the 2-octet field value (AS_TRANS when the real AS needs 4 octets)
    hold_time: int
    bgp_id: bytes
    opt_params: bytes = b""
    kind: int = field(init=False, default=MSG_OPEN)

    @property
    def capabilities(self) -> tuple[tuple[int, bytes], ...]:
        """(code, value) pairs from capability option parameters, order preserved."""
        caps = []
        buf, off = self.opt_params, 0
        while off + 2 <= len(buf):
            ptype, plen = buf[off], buf[off + 1]
            body = buf[off + 2 : off + 2 + plen]
            off += 2 + plen
            if ptype != 2 or len(body) != plen:
                continue
            coff = 0
            while coff + 2 <= len(body):
                code, clen = body[coff], body[coff + 1]
                caps.append((code, body[coff + 2 : coff + 2 + clen]))
                coff += 2 + clen
        return tuple(caps)

    @property
    def as4_capability(self) -> int | None:
        for code, value in self.capabilities:
            if code == CAP_AS4 and len(value) == 4:
                return struct.unpack("!I", value)[0]
        return None

    @property
    def peer_as(self) -> int:
        """The peer's real AS: 4-octet capability if present, else the 2-octet field."""
        as4 = self.as4_capability
        return as4 if as4 is not None else self.my_as

    @staticmethod
    def build(my_as: int, hold_time: int, bgp_id: bytes, *,
              mp_v4: bool = True, mp_v6: bool = True, as4: bool = True) -> "OpenMessage":
        caps = bytearray()
        if mp_v4:
            caps += bytes([CAP_MULTIPROTOCOL, 4]) + struct.pack("!HBB", 1, 0, 1)
        if mp_v6:
            caps += bytes([CAP_MULTIPROTOCOL, 4]) + struct.pack("!HBB", 2, 0, 1)
        if as4:
            caps += bytes([CAP_AS4, 4]) + struct.pack("!I", my_as)
        opt = bytes([2, len(caps)]) + bytes(caps) if caps else b""
        field_as = my_as if my_as <= 0xFFFF else AS_TRANS
        return OpenMessage(4, field_as, hold_time, bgp_id, opt)


@dataclass(frozen=True, slots=True)
class UpdateMessage(BgpMessage):
    withdrawn: tuple[Prefix, ...] = ()
    path_attributes: PathAttributes = field(default_factory=PathAttributes)
    nlri: tuple[Prefix, ...] = ()
    kind: int = field(init=False, default=MSG_UPDATE)

    @property
    def announced(self) -> tuple[Prefix, ...]:
        mp = self.path_attributes.mp_reach
        return self.nlri + (mp.prefixes if mp else ())

    @property
    def withdrawn_all(self) -> tuple[Prefix, ...]:
        mp = self.path_attributes.mp_unreach
        return self.withdrawn + (mp.prefixes if mp else ())

    @property
    def is_end_of_rib(self) -> bool:
        pa = self.path_attributes
        if self.withdrawn or self.nlri:
            return False
        if not pa.attrs:
            return True
        mp = pa.mp_unreach
        return len(pa.attrs) == 1 and mp is not None and not mp.prefixes


@dataclass(frozen=True, slots=True)
class NotificationMessage(BgpMessage):
    code: int
    subcode: int
    data: bytes = b""
    kind: int = field(init=False, default=MSG_NOTIFICATION)


@dataclass(frozen=True, slots=True)
class KeepaliveMessage(BgpMessage):
    kind: int = field(init=False, default=MSG_KEEPALIVE)


# NOTIFICATION code/subcode pairs used by the collector
NOTIF_MSG_HEADER_ERROR = (1, 0)
NOTIF_BAD_PEER_AS = (2, 2)
NOTIF_HOLD_TIMER_EXPIRED = (4, 0)
NOTIF_CEASE_COLLISION = (6, 7)
NOTIF_CEASE_ADMIN_SHUTDOWN = (6, 2)


# ---------------------------------------------------------------------------
# codec entry points


def frame_length(buf: bytes | memoryview, offset: int = 0) -> int | None:
    """Validated total length of the message starting at ``offset``.

    None when fewer than 19 octets are available; raises on a bad header so
    stream readers can tear the session down.
    """
    if len(buf) - offset < HEADER_LEN:
        return None
    if bytes(buf[offset : offset + 16]) != MARKER:
        raise BadMarker("header marker is not all ones")
    length = (buf[offset + 16] << 8) | buf[offset + 17]
    if not HEADER_LEN <= length <= MAX_MESSAGE:
        raise BadLength(f"declared length {length} outside 19..4096")
    return length


def decode_message(octets: bytes, offset: int = 0, as4: bool = True) -> tuple[BgpMessage, int]:
    """Decode one message; returns (message, consumed octet count)."""
    length = frame_length(octets, offset)
    if length is None:
        raise Truncated("fewer than 19 octets available")
    if offset + length > len(octets):
        raise Truncated("declared length exceeds input")
    msg_type = octets[offset + 18]
    body = bytes(octets[offset + HEADER_LEN : offset + length])

    if msg_type == MSG_KEEPALIVE:
        if body:
            raise BadLength("KEEPALIVE with a body")
        return KeepaliveMessage(), length

    if msg_type == MSG_OPEN:
        if len(body) < 10:
            raise Truncated("OPEN body shorter than 10 octets")
        version, my_as, hold_time = struct.unpack_from("!BHH", body, 0)
        bgp_id = body[5:9]
        opt_len = body[9]
        if 10 + opt_len != len(body):
            raise BadLength("OPEN optional-parameter length mismatch")
        return OpenMessage(version, my_as, hold_time, bgp_id, body[10:]), length

    if msg_type == MSG_UPDATE:
        if len(body) < 4:
            raise Truncated("UPDATE body shorter than 4 octets")
        wlen = struct.unpack_from("!H", body, 0)[0]
        if 2 + wlen + 2 > len(body):
            raise Truncated("withdrawn-routes length exceeds body")
        withdrawn = _parse_nlri_list(Family.IPV4, body[2 : 2 + wlen])
        alen = struct.unpack_from("!H", body, 2 + wlen)[0]
        attrs_end = 4 + wlen + alen
        if attrs_end > len(body):
            raise Truncated("attribute length exceeds body")
        attrs = decode_attributes(body[4 + wlen : attrs_end], as4=as4)
        nlri = _parse_nlri_list(Family.IPV4, body[attrs_end:])
        return UpdateMessage(withdrawn, attrs, nlri), length

    if msg_type == MSG_NOTIFICATION:
        if len(body) < 2:
            raise Truncated("NOTIFICATION body shorter than 2 octets")
        return NotificationMessage(body[0], body[1], body[2:]), length

    raise UnknownType(f"message type {msg_type} outside 1..4")


def encode_message(msg: BgpMessage) -> bytes:
    if isinstance(msg, KeepaliveMessage):
        body = b""
    elif isinstance(msg, OpenMessage):
        body = (
            struct.pack("!BHH", msg.version, msg.my_as, msg.hold_time)
            + msg.bgp_id
            + bytes([len(msg.opt_params)])
            + msg.opt_params
        )
    elif isinstance(msg, UpdateMessage):
        wd = b"".join(p.wire() for p in msg.withdrawn)
        attrs = msg.path_attributes.encode()
        body = (
            struct.pack("!H", len(wd)) + wd
            + struct.pack("!H", len(attrs)) + attrs
            + b"".join(p.wire() for p in msg.nlri)
        )
    elif isinstance(msg, NotificationMessage):
        body = bytes([msg.code, msg.subcode]) + msg.data
    else:
        raise ValueError(f"cannot encode {type(msg).__name__}")
    length = HEADER_LEN + len(body)
    if length > MAX_MESSAGE:
        raise Oversize(f"encoding would take {length} octets")
    return MARKER + struct.pack("!HB", length, msg.kind) + body


def iter_messages(octets: bytes, as4: bool = True):
    """Decode back-to-back messages from a buffer; yields BgpMessage values."""
    offset = 0
    while offset < len(octets):
        msg, consumed = decode_message(octets, offset, as4=as4)
        yield msg
        offset += consumed
