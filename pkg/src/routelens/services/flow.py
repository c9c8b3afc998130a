"""Flow-based service helpers: live update summaries, rolling rates, and
routing-table-view rows.

These are the pure pieces behind the per-feeder streaming services; the
gateway glues them to dispatch channels and to client sessions.
"""

from __future__ import annotations

from collections import deque

from ..hdsrs.store import attrs_to_json
from ..mim.filters import TaggedUpdate
from ..rce.rib import Rib, RibDelta, RibEntry
from ..wire.prefix import Prefix

#: Rolling statistics windows, label -> seconds.
RATE_WINDOWS = (("1m", 60), ("5m", 300), ("15m", 900))


class UnknownFeeder(Exception):
    """The named feeder is not part of this collector's configuration."""


class RollingRates:
    """Messages/min and prefixes/min over 1/5/15-minute rolling windows."""

    def __init__(self) -> None:
        self._events: deque[tuple[int, int]] = deque()  # (timestamp µs, prefix count)

    def observe(self, timestamp_us: int, prefix_count: int) -> None:
        self._events.append((timestamp_us, prefix_count))
        horizon = timestamp_us - RATE_WINDOWS[-1][1] * 1_000_000
        while self._events and self._events[0][0] <= horizon:
            self._events.popleft()

    def rates(self, now_us: int) -> dict:
        out = {}
        for label, seconds in RATE_WINDOWS:
            cutoff = now_us - seconds * 1_000_000
            messages = prefixes = 0
            for ts, count in self._events:
                if ts > cutoff and ts <= now_us:
                    messages += 1
                    prefixes += count
            minutes = seconds / 60.0
            out[label] = {
                "messages_per_min": messages / minutes,
                "prefixes_per_min": prefixes / minutes,
            }
        return out


def update_summary(tagged: TaggedUpdate) -> dict:
    """Compact JSON form of one dispatched UPDATE, for flow streams."""
    update = tagged.update
    return {
        "feeder": tagged.feeder_id,
        "received_at": tagged.received_at,
        "announced": [str(p) for p in update.announced],
        "withdrawn": [str(p) for p in update.withdrawn_all],
        "attributes": attrs_to_json(update.path_attributes) if update.announced else {},
        "size": len(tagged.octets),
    }


def portion_match(candidate: Prefix, portion: Prefix, mode: str) -> bool:
    """Does ``candidate`` fall inside the watched table portion?

    Modes mirror the dispatch filters — ``exact``, ``more_specifics``
    (strictly longer, covered by the portion), ``less_specifics`` (strictly
    shorter, covering it) — plus ``all`` for their union.
    """
    if candidate.family is not portion.family:
        return False
    if mode == "exact":
        return candidate == portion
    if mode == "more_specifics":
        return candidate.length > portion.length and candidate.within(portion)
    if mode == "less_specifics":
        return candidate.length < portion.length and portion.within(candidate)
    if mode == "all":
        return candidate.within(portion) or portion.within(candidate)
    raise ValueError(f"unknown portion mode {mode!r}")


def entry_row(entry: RibEntry) -> dict:
    return {
        "feeder": entry.feeder_id,
        "prefix": str(entry.prefix),
        "attributes": attrs_to_json(entry.attributes),
        "received_at": entry.received_at,
        "stale": entry.stale,
    }


def rtv_table(
    rib: Rib, feeder_id: str, portion: Prefix, mode: str, timestamp: int = 0
) -> list[dict]:
    """Initial table rows for a routing-table-view session."""
    if feeder_id not in rib.feeder_ids():
        raise UnknownFeeder(feeder_id)
    return [entry_row(e) for e in rib.lookup(portion, mode, scope=feeder_id, timestamp=timestamp)]


def delta_rows(delta: RibDelta, portion: Prefix, mode: str) -> list[dict]:
    """Serialize the portion-relevant part of one table change.

    Announcements (fresh or replacing) become ``announce`` upserts and
    withdrawals become ``withdraw`` rows, so folding a row stream into a
    table is a plain upsert/delete per prefix.
    """
    rows = []
    for prefix, attrs in delta.added:
        if portion_match(prefix, portion, mode):
            rows.append(
                {
                    "op": "announce",
                    "feeder": delta.feeder_id,
                    "prefix": str(prefix),
                    "attributes": attrs_to_json(attrs),
                    "at": delta.timestamp,
                }
            )
    for prefix, _old, attrs in delta.replaced:
        if portion_match(prefix, portion, mode):
            rows.append(
                {
                    "op": "announce",
                    "feeder": delta.feeder_id,
                    "prefix": str(prefix),
                    "attributes": attrs_to_json(attrs),
                    "at": delta.timestamp,
                }
            )
    for prefix in delta.removed:
        if portion_match(prefix, portion, mode):
            rows.append(
                {
                    "op": "withdraw",
                    "feeder": delta.feeder_id,
                    "prefix": str(prefix),
                    "at": delta.timestamp,
                }
            )
    return rows
