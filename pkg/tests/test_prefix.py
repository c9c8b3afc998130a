"""Prefix model vs. the stdlib ipaddress oracle."""

import ipaddress
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routelens.wire.prefix import Family, Prefix, PrefixError, canonicalize_prefix

from conftest import random_prefix


def _to_stdlib(p: Prefix):
    if p.family is Family.IPV4:
        return ipaddress.ip_network((p.packed[:4], p.length))
    return ipaddress.ip_network((p.packed, p.length))


@st.composite
def prefixes(draw, family=None):
    fam = family or draw(st.sampled_from((Family.IPV4, Family.IPV6)))
    length = draw(st.integers(0, fam.max_length))
    bits = draw(st.integers(0, (1 << length) - 1)) << (128 - length) if length else 0
    return Prefix(fam, length, bits)


class TestParsing:
    def test_parse_v4(self):
        p = Prefix.parse("10.1.0.0/16")
        assert (p.family, p.length) == (Family.IPV4, 16)
        assert p.packed[:4] == bytes([10, 1, 0, 0])

    def test_parse_v6(self):
        p = Prefix.parse("2001:db8::/32")
        assert (p.family, p.length) == (Family.IPV6, 32)
        assert p.packed == ipaddress.ip_network("2001:db8::/32").network_address.packed

    def test_parse_bare_host_gets_full_length(self):
        assert Prefix.parse("192.0.2.1").length == 32
        assert Prefix.parse("2001:db8::1").length == 128

    def test_parse_rejects_garbage(self):
        for bad in ("not-an-ip", "10.0.0.0/33", "::/129", "10.0.0.0/-1"):
            with pytest.raises(PrefixError):
                Prefix.parse(bad)

    def test_noncanonical_bits_rejected(self):
        # host bits set below the mask must not validate
        with pytest.raises(PrefixError):
            Prefix(Family.IPV4, 8, (0x0A01 << 112))

    def test_from_packed_masks_excess(self):
        p = Prefix.from_packed(Family.IPV4, 8, bytes([10, 1, 2, 3]))
        assert str(p) == "10.0.0.0/8"

    @given(prefixes())
    @settings(max_examples=300)
    def test_str_round_trip(self, p):
        assert Prefix.parse(str(p)) == p
        assert str(p) == str(_to_stdlib(p))


class TestContainment:
    @given(prefixes(), prefixes())
    @settings(max_examples=500)
    def test_covers_matches_stdlib_subnet_of(self, a, b):
        if a.family is not b.family:
            assert not a.covers(b) and not b.covers(a)
            return
        assert a.covers(b) == _to_stdlib(b).subnet_of(_to_stdlib(a))
        assert b.within(a) == a.covers(b)

    @given(prefixes())
    @settings(max_examples=200)
    def test_ancestor_is_shorter_and_covering(self, p):
        for length in range(0, p.length + 1):
            anc = p.ancestor(length)
            assert anc.length == length
            assert anc.covers(p)

    def test_default_routes_cover_everything(self):
        v4_default = Prefix.parse("0.0.0.0/0")
        v6_default = Prefix.parse("::/0")
        assert v4_default.covers(Prefix.parse("203.0.113.0/24"))
        assert v6_default.covers(Prefix.parse("2001:db8::/32"))
        assert not v4_default.covers(Prefix.parse("2001:db8::/32"))


class TestWireForm:
    def test_wire_layout(self):
        p = Prefix.parse("10.32.0.0/12")
        assert p.wire() == bytes([12, 10, 32])

    def test_zero_length_wire(self):
        assert Prefix.parse("0.0.0.0/0").wire() == b"\x00"

    @given(prefixes())
    @settings(max_examples=500)
    def test_wire_round_trip(self, p):
        buf = p.wire()
        got, consumed = Prefix.from_wire(p.family, buf, 0)
        assert got == p and consumed == len(buf)

    def test_from_wire_truncated(self):
        with pytest.raises(PrefixError):
            Prefix.from_wire(Family.IPV4, bytes([24, 10, 0]), 0)

    def test_from_wire_bad_length(self):
        with pytest.raises(PrefixError):
            Prefix.from_wire(Family.IPV4, bytes([33, 0, 0, 0, 0]), 0)

    def test_packed_sixteen_octets(self):
        rng = random.Random(5)
        for _ in range(50):
            p = random_prefix(rng)
            assert len(p.packed) == 16

    def test_sort_key_orders_by_length_then_bits(self):
        a = Prefix.parse("10.0.0.0/8")
        b = Prefix.parse("9.0.0.0/9")
        assert sorted((b, a), key=lambda p: p.sort_key) == [a, b]


def test_canonicalize_prefix_masks_raw_triple():
    p = canonicalize_prefix(1, 8, bytes([10, 9, 9, 9]))
    assert p == Prefix.parse("10.0.0.0/8")
