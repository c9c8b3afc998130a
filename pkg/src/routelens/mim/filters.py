"""Inbound-message dispatch: prefix filters, channels, dual forwarding.

Every message a feeder sends travels two paths at once: the raw archival
path (RIB apply + MRT buffering) and the service path — a prefix-indexed
filter match that fans the message out to every interested channel.

Filters live in a persistent prefix trie per address family, keyed by the
filter's prefix, with the specs for that exact prefix stored at the node.
Matching an update prefix ``p`` is then three trie walks, one per mode:

* filters wanting ``exact``           — the node at ``p``;
* filters wanting ``more_specifics``  — nodes on the path above ``p``
  (their prefix covers ``p``, so ``p`` is one of their more-specifics);
* filters wanting ``less_specifics``  — nodes in the subtree below ``p``.

Cost tracks the prefix length and the number of *matching* filters, not
the installed-filter count — which is what keeps match latency flat as
filter populations grow.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Iterable

from .. import ptrie
from ..wire.messages import UpdateMessage, encode_message
from ..wire.prefix import Family, Prefix
from ..rce.rib import Rib, RibDelta
from ..rce.session import InboundMessage

SCOPE_ALL = "*"
MODES = frozenset({"exact", "more_specifics", "less_specifics"})


class FilterError(Exception):
    pass


class DuplicateFilterId(FilterError):
    pass


class UnknownChannel(FilterError):
    pass


class UnknownFilter(FilterError):
    pass


class ChannelBackpressure(FilterError):
    pass


@dataclass(frozen=True, slots=True)
class FilterSpec:
    filter_id: str
    scope: str  # feeder_id or "*" for all feeders
    prefix: Prefix
    modes: frozenset[str]
    channel_id: str

    def __post_init__(self) -> None:
        if not self.modes or not self.modes <= MODES:
            raise ValueError(f"modes must be a non-empty subset of {sorted(MODES)}")


@dataclass(frozen=True, slots=True)
class TaggedUpdate:
    feeder_id: str
    received_at: int  # µs
    octets: bytes
    update: UpdateMessage
    matched_filter_ids: tuple[str, ...]
    # trigger prefixes per filter id, and the RIB consequence of this message
    triggers: dict = field(default_factory=dict, compare=False)
    delta: RibDelta | None = field(default=None, compare=False)
    # True for collector-originated messages (stale-purge withdrawals): they
    # keep subscriber tables honest but are not routing events — detectors
    # must not classify them and they are never archived
    synthetic: bool = field(default=False, compare=False)


class Channel:
    """Bounded delivery queue for one consumer.

    Overflow never blocks the dispatch path: the message is dropped for
    this channel only (it is still archived and applied to the RIB) and
    the drop is visible to the consumer via ``drops`` /
    ``take_drop_report()`` so services can surface a gap marker.
    """

    def __init__(self, channel_id: str, capacity: int = 1024) -> None:
        self.channel_id = channel_id
        self.queue: asyncio.Queue = asyncio.Queue(capacity)
        self.drops = 0
        self._reported_drops = 0
        self.closed = False

    def offer(self, item: TaggedUpdate) -> bool:
        if self.closed:
            return False
        try:
            self.queue.put_nowait(item)
            return True
        except asyncio.QueueFull:
            self.drops += 1
            return False

    async def get(self) -> TaggedUpdate:
        return await self.queue.get()

    def take_drop_report(self) -> int:
        """Drops since the last report (consumer-side gap accounting)."""
        new = self.drops - self._reported_drops
        self._reported_drops = self.drops
        return new

    def close(self) -> None:
        self.closed = True


class FilterIndex:
    """The installed-filter set; mutation publishes new trie roots atomically."""

    def __init__(self) -> None:
        self._roots = {Family.IPV4: ptrie.EMPTY, Family.IPV6: ptrie.EMPTY}
        self._by_id: dict[str, FilterSpec] = {}

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, filter_id: str) -> FilterSpec | None:
        return self._by_id.get(filter_id)

    def ids(self) -> frozenset[str]:
        return frozenset(self._by_id)

    def specs(self) -> list[FilterSpec]:
        return sorted(self._by_id.values(), key=lambda s: s.filter_id)

    def add(self, spec: FilterSpec) -> None:
        if spec.filter_id in self._by_id:
            raise DuplicateFilterId(spec.filter_id)
        prefix = spec.prefix
        root = self._roots[prefix.family]
        bucket: tuple[FilterSpec, ...] = ptrie.get(root, prefix.bits, prefix.length) or ()
        self._roots[prefix.family] = ptrie.set_(root, prefix.bits, prefix.length, bucket + (spec,))
        self._by_id[spec.filter_id] = spec

    def remove(self, filter_id: str) -> FilterSpec:
        spec = self._by_id.pop(filter_id, None)
        if spec is None:
            raise UnknownFilter(filter_id)
        prefix = spec.prefix
        root = self._roots[prefix.family]
        bucket: tuple[FilterSpec, ...] = ptrie.get(root, prefix.bits, prefix.length) or ()
        remaining = tuple(s for s in bucket if s.filter_id != filter_id)
        if remaining:
            self._roots[prefix.family] = ptrie.set_(root, prefix.bits, prefix.length, remaining)
        else:
            self._roots[prefix.family] = ptrie.delete(root, prefix.bits, prefix.length)
        return spec

    # -- matching ---------------------------------------------------------

    def match_prefix(self, prefix: Prefix, feeder_id: str) -> Iterable[FilterSpec]:
        """Every installed filter triggered by an update touching ``prefix``."""
        root = self._roots[prefix.family]
        for depth, bucket in ptrie.walk_path(root, prefix.bits, prefix.length):
            if depth == prefix.length:
                for spec in bucket:
                    if "exact" in spec.modes and spec.scope in (SCOPE_ALL, feeder_id):
                        yield spec
            else:
                # filter prefix covers the update prefix strictly
                for spec in bucket:
                    if "more_specifics" in spec.modes and spec.scope in (SCOPE_ALL, feeder_id):
                        yield spec
        for _, length, bucket in ptrie.subtree(root, prefix.bits, prefix.length):
            if length == prefix.length:
                continue  # exact handled above
            for spec in bucket:
                if "less_specifics" in spec.modes and spec.scope in (SCOPE_ALL, feeder_id):
                    yield spec

    def match_update(self, update: UpdateMessage, feeder_id: str) -> dict[str, list[Prefix]]:
        """filter_id -> update prefixes (announced or withdrawn) that triggered it."""
        matches: dict[str, list[Prefix]] = {}
        for prefix in (*update.announced, *update.withdrawn_all):
            for spec in self.match_prefix(prefix, feeder_id):
                matches.setdefault(spec.filter_id, []).append(prefix)
        return matches


class Mim:
    """Dispatch fabric: filter index + channels + the dual forward path."""

    def __init__(self, rib: Rib, archive_add: Callable[[InboundMessage], None] | None = None) -> None:
        self.rib = rib
        self.archive_add = archive_add
        self.index = FilterIndex()
        self.channels: dict[str, Channel] = {}
        self.counters = {
            "messages_forwarded": 0,
            "updates_applied": 0,
            "parse_errors": 0,
            "channel_drops": 0,
        }
        self.delta_hooks: list[Callable[[RibDelta], None]] = []

    # -- channel management -------------------------------------------------

    def open_channel(self, channel_id: str, capacity: int = 1024) -> Channel:
        if channel_id in self.channels:
            raise ValueError(f"channel {channel_id!r} already open")
        channel = Channel(channel_id, capacity)
        self.channels[channel_id] = channel
        return channel

    def close_channel(self, channel_id: str) -> None:
        channel = self.channels.pop(channel_id, None)
        if channel is not None:
            channel.close()
        for spec in [s for s in self.index.specs() if s.channel_id == channel_id]:
            self.index.remove(spec.filter_id)

    # -- filter management ---------------------------------------------------

    def configure_filter(self, spec: FilterSpec) -> FilterSpec:
        if spec.channel_id not in self.channels:
            raise UnknownChannel(spec.channel_id)
        self.index.add(spec)
        return spec

    def remove_filter(self, filter_id: str) -> FilterSpec:
        return self.index.remove(filter_id)

    def match_update(self, update: UpdateMessage, feeder_id: str) -> dict[str, list[Prefix]]:
        return self.index.match_update(update, feeder_id)

    # -- the dual forward path -------------------------------------------------

    async def forward(self, inbound: InboundMessage) -> RibDelta | None:
        """Archive + apply + fan out one inbound message.  Never blocks on consumers."""
        self.counters["messages_forwarded"] += 1
        if self.archive_add is not None:
            self.archive_add(inbound)

        message = inbound.message
        if message is None:
            self.counters["parse_errors"] += 1
            return None
        if not isinstance(message, UpdateMessage):
            return None

        delta = self.rib.feeder(inbound.feeder_id).apply(message, inbound.received_at)
        self.counters["updates_applied"] += 1
        for hook in self.delta_hooks:
            hook(delta)

        self._fan_out(inbound.feeder_id, inbound.octets, message, delta,
                      inbound.received_at, synthetic=False)
        return delta

    def dispatch_synthetic(
        self,
        feeder_id: str,
        update: UpdateMessage,
        delta: RibDelta,
        received_at: int,
    ) -> None:
        """Fan out a collector-originated update (already applied to the RIB).

        Used for stale-purge withdrawals: subscribers whose filters match see
        the table change, but nothing is archived and no RIB write happens.
        """
        for hook in self.delta_hooks:
            hook(delta)
        self._fan_out(feeder_id, encode_message(update), update, delta,
                      received_at, synthetic=True)

    def _fan_out(
        self,
        feeder_id: str,
        octets: bytes,
        message: UpdateMessage,
        delta: RibDelta | None,
        received_at: int,
        synthetic: bool,
    ) -> None:
        matches = self.index.match_update(message, feeder_id)
        if not matches:
            return
        by_channel: dict[str, list[str]] = {}
        for filter_id in matches:
            spec = self.index.get(filter_id)
            if spec is not None:
                by_channel.setdefault(spec.channel_id, []).append(filter_id)
        for channel_id, filter_ids in by_channel.items():
            channel = self.channels.get(channel_id)
            if channel is None:
                continue
            tagged = TaggedUpdate(
                feeder_id=feeder_id,
                received_at=received_at,
                octets=octets,
                update=message,
                matched_filter_ids=tuple(sorted(filter_ids)),
                triggers={fid: tuple(matches[fid]) for fid in filter_ids},
                delta=delta,
                synthetic=synthetic,
            )
            if not channel.offer(tagged):
                self.counters["channel_drops"] += 1
