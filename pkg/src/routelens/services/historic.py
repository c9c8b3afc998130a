"""Historic services over the re-indexed archive.

Both operations take half-open microsecond ranges ``[start, end)`` and are
read-only views over :class:`routelens.hdsrs.Store`:

* :func:`historic_rtv` — a feeder's table for a prefix portion at ``start``
  plus the ordered changes inside the range, shaped exactly like the live
  table-view stream so clients fold both the same way.
* :func:`historic_sr` — per-feeder maximal reachability intervals for a
  prefix across the range, under the longest-match rule.
"""

from __future__ import annotations

import heapq

from ..hdsrs.store import IndexedEvent, Store
from ..wire.prefix import Prefix


def event_row(event: IndexedEvent) -> dict:
    row = {
        "op": event.kind,  # "announce" | "withdraw"
        "feeder": event.feeder_id,
        "prefix": str(event.prefix),
        "at": event.timestamp,
    }
    if event.kind == "announce":
        row["attributes"] = event.attributes or {}
    return row


def historic_rtv(
    store: Store,
    feeder_id: str,
    portion: Prefix,
    mode: str,
    start_us: int,
    end_us: int,
) -> dict:
    """Table at ``start_us`` plus the changes in ``(start_us, end_us)``."""
    table = [
        {
            "feeder": e.feeder_id,
            "prefix": str(e.prefix),
            "attributes": e.attributes,
            "received_at": e.received_at,
            "stale": False,
        }
        for e in store.reconstruct_rib(portion, mode, start_us, feeders=[feeder_id])
    ]
    deltas = [
        event_row(e)
        for e in store.query_events(portion, mode, start_us + 1, end_us)
        if e.feeder_id == feeder_id
    ]
    return {"table": table, "deltas": deltas}


def _covering_events(store: Store, prefix: Prefix, start_us: int, end_us: int):
    exact = store.query_events(prefix, "exact", start_us, end_us)
    covering = store.query_events(prefix, "less_specifics", start_us, end_us)
    return list(heapq.merge(exact, covering, key=lambda e: e.sort_key))


def historic_sr(
    store: Store,
    prefix: Prefix,
    start_us: int,
    end_us: int,
    feeders=None,
    include_default: bool = True,
) -> dict[str, list[tuple[int, int]]]:
    """Maximal reachability intervals per feeder over ``[start_us, end_us)``.

    The range is clamped to the archive's coverage: an interval left open
    at the clamped end asserts reachability only as far as the newest
    indexed event, never beyond what the archive can know.
    """
    cov = store.coverage()
    if cov is not None:
        end_us = min(end_us, cov[1] + 1)  # the newest event proves its own instant
    feeder_set = set(feeders) if feeders is not None else None
    if end_us <= start_us:
        return {f: [] for f in sorted(feeder_set or ())}

    def admissible(p: Prefix) -> bool:
        return include_default or p.length > 0

    # held[feeder] = set of covering prefixes the feeder's table holds
    held: dict[str, set[str]] = {}
    base = store.reconstruct_rib(prefix, "exact", start_us) + store.reconstruct_rib(
        prefix, "less_specifics", start_us
    )
    for entry in base:
        if admissible(entry.prefix):
            held.setdefault(entry.feeder_id, set()).add(str(entry.prefix))

    intervals: dict[str, list[tuple[int, int]]] = {}
    open_since: dict[str, int] = {}
    if feeder_set is not None:
        for f in feeder_set:
            intervals[f] = []
            held.setdefault(f, set())
    for feeder, prefixes in held.items():
        intervals.setdefault(feeder, [])
        if prefixes:
            open_since[feeder] = start_us

    for event in _covering_events(store, prefix, start_us, end_us):
        if feeder_set is not None and event.feeder_id not in feeder_set:
            continue
        if not admissible(event.prefix):
            continue
        feeder = event.feeder_id
        prefixes = held.setdefault(feeder, set())
        intervals.setdefault(feeder, [])
        before = bool(prefixes)
        if event.kind == "announce":
            prefixes.add(str(event.prefix))
        else:
            prefixes.discard(str(event.prefix))
        after = bool(prefixes)
        if after and not before:
            open_since[feeder] = max(event.timestamp, start_us)
        elif before and not after:
            started = open_since.pop(feeder)
            if event.timestamp > started:
                intervals[feeder].append((started, event.timestamp))

    for feeder, started in open_since.items():
        if end_us > started:
            intervals[feeder].append((started, end_us))
    return {feeder: intervals[feeder] for feeder in sorted(intervals)}
