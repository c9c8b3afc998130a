"""Shared fixtures and generators for the test suite.

The randomized-message helpers here are deliberately independent of the
wire codec's own internals: they only drive the public builders, so the
byte-oracle tests elsewhere stay meaningful.
"""

from __future__ import annotations

import asyncio
import ipaddress
import os
import random
from contextlib import asynccontextmanager

import pytest

from routelens.clock import SteppedClock
from routelens.system import Collector, CollectorConfig
from routelens.wire.messages import (
    Attribute,
    KeepaliveMessage,
    NotificationMessage,
    OpenMessage,
    PathAttributes,
    UpdateMessage,
)
from routelens.wire.prefix import Family, Prefix


@pytest.fixture
def anyio_backend():
    return "asyncio"


# ---------------------------------------------------------------------------
# randomized wire-object generators (seeded rng in, deterministic out)


def random_prefix(rng: random.Random, family: Family | None = None) -> Prefix:
    if family is None:
        family = Family.IPV6 if rng.random() < 0.35 else Family.IPV4
    length = rng.randint(0, family.max_length)
    bits = rng.getrandbits(length) << (128 - length) if length else 0
    return Prefix(family, length, bits)


def random_as_path(rng: random.Random, as4: bool = True) -> Attribute:
    top = 0xFFFFFFFF if as4 else 0xFFFF
    segments = []
    for _ in range(rng.randint(1, 3)):
        seg_type = rng.choice((1, 2))
        asns = tuple(rng.randint(1, top) for _ in range(rng.randint(1, 5)))
        segments.append((seg_type, asns))
    return Attribute.as_path(tuple(segments), as4=as4)


def random_attributes(rng: random.Random, *, family: Family = Family.IPV4,
                      mp_prefixes: tuple[Prefix, ...] = (),
                      mp_withdrawn: tuple[Prefix, ...] = (),
                      as4: bool = True) -> PathAttributes:
    attrs: list[Attribute] = [
        Attribute.origin(rng.choice((0, 1, 2))),
        random_as_path(rng, as4=as4),
    ]
    if family is Family.IPV4 and not mp_prefixes:
        attrs.append(Attribute.next_hop(rng.getrandbits(32).to_bytes(4, "big")))
    if rng.random() < 0.4:
        attrs.append(Attribute.med(rng.getrandbits(32)))
    if rng.random() < 0.3:
        attrs.append(Attribute.local_pref(rng.getrandbits(32)))
    if rng.random() < 0.3:
        n = rng.randint(1, 6)
        attrs.append(Attribute.communities(tuple(rng.getrandbits(32) for _ in range(n))))
    if mp_prefixes:
        nh = rng.getrandbits(128).to_bytes(16, "big")
        attrs.append(Attribute.mp_reach(Family.IPV6, nh, mp_prefixes))
    if mp_withdrawn:
        attrs.append(Attribute.mp_unreach(Family.IPV6, mp_withdrawn))
    if rng.random() < 0.15:
        # unknown optional-transitive attribute: value octets must survive verbatim
        attrs.append(Attribute.build(rng.randint(32, 200),
                                     rng.randbytes(rng.randint(0, 300))))
    return PathAttributes(tuple(attrs), as4=as4)


def random_update(rng: random.Random, as4: bool = True) -> UpdateMessage:
    style = rng.random()
    if style < 0.15:  # pure v4 withdraw
        wd = tuple(random_prefix(rng, Family.IPV4) for _ in range(rng.randint(1, 8)))
        return UpdateMessage(withdrawn=wd, path_attributes=PathAttributes(as4=as4), nlri=())
    if style < 0.30:  # v6 announce via MP_REACH
        pfx = tuple(random_prefix(rng, Family.IPV6) for _ in range(rng.randint(1, 6)))
        attrs = random_attributes(rng, family=Family.IPV6, mp_prefixes=pfx, as4=as4)
        return UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=())
    if style < 0.42:  # v6 withdraw via MP_UNREACH
        pfx = tuple(random_prefix(rng, Family.IPV6) for _ in range(rng.randint(1, 6)))
        attrs = PathAttributes((Attribute.mp_unreach(Family.IPV6, pfx),), as4=as4)
        return UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=())
    if style < 0.47:  # end-of-rib
        return UpdateMessage(withdrawn=(), path_attributes=PathAttributes(as4=as4), nlri=())
    # plain v4 announce, sometimes with piggybacked withdraws
    nlri = tuple(random_prefix(rng, Family.IPV4) for _ in range(rng.randint(1, 10)))
    wd = ()
    if rng.random() < 0.25:
        wd = tuple(random_prefix(rng, Family.IPV4) for _ in range(rng.randint(1, 4)))
    return UpdateMessage(withdrawn=wd,
                         path_attributes=random_attributes(rng, as4=as4), nlri=nlri)


def random_message(rng: random.Random):
    roll = rng.random()
    if roll < 0.70:
        return random_update(rng)
    if roll < 0.80:
        return OpenMessage.build(
            rng.randint(1, 0xFFFFFFFF), rng.choice((0, 3, 90, 65535)),
            rng.getrandbits(32).to_bytes(4, "big"),
            mp_v4=rng.random() < 0.9, mp_v6=rng.random() < 0.9,
            as4=rng.random() < 0.9,
        )
    if roll < 0.90:
        return KeepaliveMessage()
    return NotificationMessage(rng.randint(1, 6), rng.randint(0, 11),
                               rng.randbytes(rng.randint(0, 32)))


# ---------------------------------------------------------------------------
# collector plumbing


def collector_config(base_dir, feeders, **extra) -> CollectorConfig:
    doc = {
        "bgp": {"bind": "127.0.0.1", "port": 0},
        "control": {"bind": "127.0.0.1", "port": 0},
        "archive_dir": os.path.join(str(base_dir), "archive"),
        "index_dir": os.path.join(str(base_dir), "index"),
        "state_dir": os.path.join(str(base_dir), "state"),
        "feeders": feeders,
    }
    doc.update(extra)
    return CollectorConfig.from_dict(doc)


@asynccontextmanager
async def running_collector(base_dir, feeders, *, clock=None, **extra):
    clock = clock or SteppedClock(1_700_000_000.0)
    collector = Collector(collector_config(base_dir, feeders, **extra), clock=clock)
    await collector.start()
    try:
        yield collector
    finally:
        await collector.stop()


SIM_FEEDER = {"feeder_id": "sim-a", "local_as": 64512, "expected_peer_as": 65010}


class StreamHarness:
    """Queue-pair transport for serve_stream: test talks JSON both ways."""

    def __init__(self):
        self.to_server: asyncio.Queue = asyncio.Queue()
        self.to_client: asyncio.Queue = asyncio.Queue()
        self.task: asyncio.Task | None = None

    def start(self, manager, user="u1", grants=None, heartbeat_s=10_000):
        from routelens.gateway import serve_stream
        grants = grants or {"user": user, "feeders": ["*"]}
        self.task = asyncio.create_task(
            serve_stream(manager, user, grants, self.to_server.get,
                         self.to_client.put, heartbeat_s=heartbeat_s))
        return self

    async def send(self, frame: dict):
        await self.to_server.put(frame)

    async def recv(self, timeout=2.0) -> dict:
        return await asyncio.wait_for(self.to_client.get(), timeout)

    def drain(self) -> list[dict]:
        out = []
        while not self.to_client.empty():
            out.append(self.to_client.get_nowait())
        return out

    async def stop(self):
        if self.task is not None:
            self.task.cancel()
            try:
                await self.task
            except (asyncio.CancelledError, Exception):
                pass


def ip_bits(text: str) -> int:
    """128-bit MSB-aligned integer for an address or prefix string."""
    addr = ipaddress.ip_network(text, strict=False).network_address
    value = int(addr)
    if addr.version == 4:
        return value << 96
    return value
