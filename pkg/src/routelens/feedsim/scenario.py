"""Declarative feeder scenarios.

A scenario describes simulated feeders (AS number, router id, optional
source address, an initial table) and a microsecond-offset timeline of
actions — announce, withdraw, drop_session, reopen_session — plus a clock
mode.  Scenario files are plain JSON so test fixtures are data::

    {
      "seed": 7,
      "clock": {"mode": "stepped"},
      "hold_s": 90,
      "feeders": [
        {"feeder_id": "sim-a", "asn": 65010, "bgp_id": "10.9.0.1",
         "table": [{"prefix": "10.20.0.0/16",
                    "attrs": {"as_path": [[2, [65010, 64600]]]}}]},
        {"feeder_id": "sim-b", "asn": 65011, "bgp_id": "10.9.0.2",
         "table_spec": {"n": 100, "seed": 3}}
      ],
      "timeline": [
        {"at_us": 1000000, "feeder": "sim-a", "action": "withdraw",
         "prefix": "10.20.0.0/16"},
        {"at_us": 2000000, "feeder": "sim-a", "action": "announce",
         "prefix": "10.20.0.0/16", "attrs": {"as_path": [[2, [65010, 64601]]]}}
      ]
    }

Attribute specs are JSON dicts mirroring the decoded attribute views:
``origin`` (int, default 0), ``as_path`` (list of [segment-type, [asns]]),
``next_hop`` (address string; defaults to the feeder's router id),
``med``, ``local_pref``, ``communities``.  IPv6 prefixes are carried in
multiprotocol attributes automatically.
"""

from __future__ import annotations

import ipaddress
import json
import random
from dataclasses import dataclass
from pathlib import Path

from ..wire.messages import SEG_SEQUENCE, Attribute, PathAttributes, UpdateMessage
from ..wire.prefix import Family, Prefix

ACTIONS = ("announce", "withdraw", "drop_session", "reopen_session")
CLOCK_MODES = ("realtime", "accelerated", "stepped")

#: prefix lengths a generated table draws from, weighted toward /24
_GEN_LENGTHS = (16, 18, 20, 22, 24)
_GEN_WEIGHTS = (1, 2, 3, 3, 6)


def generate_table(n: int, seed: int, first_as: int | None = None) -> list[dict]:
    """``n`` pairwise-disjoint v4 prefixes with randomized lengths and paths.

    Deterministic for a given ``(n, seed, first_as)``; blocks are carved
    sequentially out of 10.0.0.0/4 so no prefix contains another.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = random.Random(seed)
    cursor = 0x0A000000
    entries = []
    for _ in range(n):
        length = rng.choices(_GEN_LENGTHS, weights=_GEN_WEIGHTS, k=1)[0]
        block = 1 << (32 - length)
        cursor = (cursor + block - 1) & ~(block - 1)
        if cursor + block > 0xE0000000:
            raise ValueError(f"table of {n} prefixes exhausted the address pool")
        address = str(ipaddress.IPv4Address(cursor))
        cursor += block
        hops = [first_as] if first_as is not None else []
        hops += [rng.randrange(64512, 65500) for _ in range(rng.randint(1, 3))]
        attrs: dict = {"as_path": [[SEG_SEQUENCE, hops]]}
        if rng.random() < 0.3:
            attrs["med"] = rng.randrange(0, 100)
        if rng.random() < 0.4:
            head = hops[0] if hops else 64512
            attrs["communities"] = sorted(
                (head << 16) | rng.randrange(1, 500) for _ in range(rng.randint(1, 3))
            )
        entries.append({"prefix": f"{address}/{length}", "attrs": attrs})
    return entries


def attrs_from_spec(spec: dict, default_next_hop: str, announce: Prefix | None = None) -> PathAttributes:
    """Build canonical path attributes from a JSON attribute spec.

    When ``announce`` is IPv6 the next hop and NLRI travel in an MP_REACH
    attribute; otherwise NEXT_HOP is emitted (and the caller puts the
    prefix in the plain NLRI field).
    """
    next_hop_text = spec.get("next_hop", default_next_hop)
    path = tuple(
        (int(seg_type), tuple(int(a) for a in asns))
        for seg_type, asns in spec.get("as_path", ())
    )
    attrs = [Attribute.origin(int(spec.get("origin", 0)))]
    attrs.append(Attribute.as_path(path))
    v6 = announce is not None and announce.family is Family.IPV6
    if v6:
        nh = ipaddress.ip_address(next_hop_text)
        if nh.version != 6:
            nh = ipaddress.IPv6Address(f"::ffff:{nh}")
        attrs.append(Attribute.mp_reach(Family.IPV6, nh.packed, (announce,)))
    else:
        attrs.append(Attribute.next_hop(ipaddress.IPv4Address(next_hop_text).packed))
    if spec.get("med") is not None:
        attrs.append(Attribute.med(int(spec["med"])))
    if spec.get("local_pref") is not None:
        attrs.append(Attribute.local_pref(int(spec["local_pref"])))
    if spec.get("communities"):
        attrs.append(Attribute.communities(tuple(int(c) for c in spec["communities"])))
    return PathAttributes(tuple(attrs))


def build_announce(prefix: Prefix, spec: dict, default_next_hop: str) -> UpdateMessage:
    attrs = attrs_from_spec(spec, default_next_hop, announce=prefix)
    nlri = (prefix,) if prefix.family is Family.IPV4 else ()
    return UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=nlri)


def build_withdraw(prefix: Prefix) -> UpdateMessage:
    if prefix.family is Family.IPV6:
        attrs = PathAttributes((Attribute.mp_unreach(Family.IPV6, (prefix,)),))
        return UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=())
    return UpdateMessage(withdrawn=(prefix,), path_attributes=PathAttributes(), nlri=())


@dataclass(frozen=True, slots=True)
class TimelineAction:
    at_us: int
    feeder_id: str
    action: str
    prefix: Prefix | None = None
    attrs: dict | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown timeline action {self.action!r}")
        if self.action in ("announce", "withdraw") and self.prefix is None:
            raise ValueError(f"{self.action} needs a prefix")


@dataclass(frozen=True, slots=True)
class FeederSpec:
    feeder_id: str
    asn: int
    bgp_id: str
    source: str | None = None
    hold_s: int = 90
    table: tuple[dict, ...] = ()

    @property
    def default_next_hop(self) -> str:
        return self.source or self.bgp_id


@dataclass(frozen=True, slots=True)
class Scenario:
    feeders: tuple[FeederSpec, ...] = ()
    timeline: tuple[TimelineAction, ...] = ()
    clock_mode: str = "stepped"
    accel_factor: float = 1.0
    seed: int = 0
    hold_s: int = 90

    def __post_init__(self):
        if self.clock_mode not in CLOCK_MODES:
            raise ValueError(f"unknown clock mode {self.clock_mode!r}")
        ids = [f.feeder_id for f in self.feeders]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate feeder_id in scenario")
        known = set(ids)
        last = -1
        for action in self.timeline:
            if action.at_us < last:
                raise ValueError("timeline offsets must be non-decreasing")
            last = action.at_us
            if action.feeder_id not in known:
                raise ValueError(f"timeline references unknown feeder {action.feeder_id!r}")

    def feeder(self, feeder_id: str) -> FeederSpec:
        for spec in self.feeders:
            if spec.feeder_id == feeder_id:
                return spec
        raise KeyError(feeder_id)

    @property
    def horizon_us(self) -> int:
        return self.timeline[-1].at_us if self.timeline else 0

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        seed = int(doc.get("seed", 0))
        hold_s = int(doc.get("hold_s", 90))
        feeders = []
        for entry in doc.get("feeders", []):
            table = entry.get("table")
            if table is None and "table_spec" in entry:
                spec = entry["table_spec"]
                table = generate_table(
                    int(spec["n"]), int(spec.get("seed", seed)), first_as=entry["asn"]
                )
            feeders.append(
                FeederSpec(
                    feeder_id=entry["feeder_id"],
                    asn=int(entry["asn"]),
                    bgp_id=entry["bgp_id"],
                    source=entry.get("source"),
                    hold_s=int(entry.get("hold_s", hold_s)),
                    table=tuple(table or ()),
                )
            )
        timeline = tuple(
            TimelineAction(
                at_us=int(a["at_us"]),
                feeder_id=a["feeder"],
                action=a["action"],
                prefix=Prefix.parse(a["prefix"]) if "prefix" in a else None,
                attrs=a.get("attrs"),
            )
            for a in doc.get("timeline", [])
        )
        clock = doc.get("clock", {})
        return cls(
            feeders=tuple(feeders),
            timeline=timeline,
            clock_mode=clock.get("mode", "stepped"),
            accel_factor=float(clock.get("factor", 1.0)),
            seed=seed,
            hold_s=hold_s,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))
