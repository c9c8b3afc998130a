"""Canonical prefix representation.

A prefix is (family, length, address) where the address always lives in a
16-octet buffer with the significant bits at the top: an IPv4 address fills
octets 0-3 and octets 4-15 are zero.  Invariants, enforced on construction:

* length is within the family bound (0..32 / 0..128);
* every address bit past ``length`` is zero (the canonical, masked form).

Internally the buffer is carried as a 128-bit int (``bits``) because all of
the matching math — containment, trie descent, shard extraction — is bit
arithmetic.  ``packed`` materialises the 16-octet buffer on demand.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from enum import IntEnum

_MASK128 = (1 << 128) - 1


class PrefixError(ValueError):
    pass


class Family(IntEnum):
    """Address family, valued as the wire AFI."""

    IPV4 = 1
    IPV6 = 2

    @property
    def max_length(self) -> int:
        return 32 if self is Family.IPV4 else 128

    @property
    def addr_octets(self) -> int:
        return 4 if self is Family.IPV4 else 16


def _mask(length: int) -> int:
    return _MASK128 ^ ((1 << (128 - length)) - 1) if length < 128 else _MASK128


@dataclass(frozen=True, slots=True)
class Prefix:
    family: Family
    length: int
    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.length <= self.family.max_length:
            raise PrefixError(f"length {self.length} out of range for {self.family.name}")
        if self.bits & ~_mask(self.length):
            raise PrefixError("address has bits set past the prefix length")
        if self.bits >> 128:
            raise PrefixError("address wider than 16 octets")

    # -- construction -------------------------------------------------

    @classmethod
    def from_packed(cls, family: Family, length: int, packed: bytes) -> "Prefix":
        """Build from a full 16-octet (or family-width) buffer, masking excess bits."""
        if len(packed) == family.addr_octets:
            packed = packed + b"\x00" * (16 - len(packed))
        if len(packed) != 16:
            raise PrefixError(f"expected 4/16-octet address, got {len(packed)}")
        if not 0 <= length <= family.max_length:
            raise PrefixError(f"length {length} out of range for {family.name}")
        return cls(family, length, int.from_bytes(packed, "big") & _mask(length))

    @classmethod
    def parse(cls, text: str) -> "Prefix":
        """Parse ``"10.0.0.0/8"`` / ``"2001:db8::/32"``; host addresses get a full-length mask."""
        text = text.strip()
        length: int | None = None
        if "/" in text:
            addr_s, _, len_s = text.partition("/")
            try:
                length = int(len_s)
            except ValueError as exc:
                raise PrefixError(f"bad prefix length in {text!r}") from exc
            if length < 0:
                raise PrefixError(f"bad prefix length in {text!r}")
        else:
            addr_s = text
        try:
            addr = ipaddress.ip_address(addr_s)
        except ValueError as exc:
            raise PrefixError(f"bad address in {text!r}") from exc
        family = Family.IPV4 if addr.version == 4 else Family.IPV6
        if length is None:
            length = family.max_length
        return cls.from_packed(family, length, addr.packed)

    # -- views ---------------------------------------------------------

    @property
    def packed(self) -> bytes:
        """The canonical 16-octet buffer."""
        return self.bits.to_bytes(16, "big")

    @property
    def addr_packed(self) -> bytes:
        """Family-width address octets (4 for v4, 16 for v6)."""
        return self.packed[: self.family.addr_octets]

    @property
    def address(self) -> str:
        if self.family is Family.IPV4:
            return str(ipaddress.IPv4Address(self.addr_packed))
        return str(ipaddress.IPv6Address(self.addr_packed))

    def __str__(self) -> str:
        return f"{self.address}/{self.length}"

    def __repr__(self) -> str:
        return f"Prefix({str(self)!r})"

    # -- ordering & containment ---------------------------------------

    @property
    def sort_key(self) -> tuple[int, int, int]:
        """(length ascending, address, family) — the result ordering used by table lookups."""
        return (self.length, self.bits, int(self.family))

    def covers(self, other: "Prefix") -> bool:
        """True when ``other`` is equal to or more specific than self."""
        return (
            self.family is other.family
            and self.length <= other.length
            and (other.bits & _mask(self.length)) == self.bits
        )

    def within(self, other: "Prefix") -> bool:
        return other.covers(self)

    def ancestor(self, length: int) -> "Prefix":
        """The covering prefix of the given (shorter or equal) length."""
        if length > self.length:
            raise PrefixError("ancestor cannot be longer than the prefix")
        return Prefix(self.family, length, self.bits & _mask(length))

    # -- wire form (RFC 4271 NLRI / withdrawn-route encoding) ----------

    def wire(self) -> bytes:
        nbytes = (self.length + 7) // 8
        return bytes([self.length]) + self.packed[:nbytes]

    @classmethod
    def from_wire(cls, family: Family, buf: bytes, offset: int) -> tuple["Prefix", int]:
        """Decode one length-prefixed NLRI entry; returns (prefix, next_offset)."""
        if offset >= len(buf):
            raise PrefixError("truncated NLRI entry")
        length = buf[offset]
        if length > family.max_length:
            raise PrefixError(f"NLRI length {length} exceeds {family.name} bound")
        nbytes = (length + 7) // 8
        end = offset + 1 + nbytes
        if end > len(buf):
            raise PrefixError("truncated NLRI address bytes")
        return cls.from_packed(family, length, buf[offset + 1 : end] + b"\x00" * (16 - nbytes)), end


def canonicalize_prefix(family: Family | int, length: int, addr: bytes) -> Prefix:
    """Mask and bound-check raw (family, length, address-bytes) into a Prefix."""
    return Prefix.from_packed(Family(family), length, addr)
