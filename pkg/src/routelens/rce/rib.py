"""Routing Information Base: best route per (feeder, prefix).

Each feeder owns a persistent prefix trie per address family.  The writer
(the feeder's session context, always exactly one) builds new tries by
path copying and publishes ``(version, v4 root, v6 root, stale_since)`` as
a single reference assignment, so:

* ``snapshot`` is O(1) — grab the published tuple, never blocks, and is
  always a table that existed at some instant (a prefix of the feeder's
  applied-update sequence);
* readers traversing an old root are immune to concurrent writes.

Cross-feeder snapshots read each feeder's publication independently;
updates from different feeders touch disjoint (feeder, prefix) keys, so
any combination of per-feeder prefixes is a consistent collector state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .. import ptrie
from ..wire.messages import PathAttributes, UpdateMessage
from ..wire.prefix import Family, Prefix


@dataclass(frozen=True, slots=True)
class RibEntry:
    feeder_id: str
    prefix: Prefix
    attributes: PathAttributes
    received_at: int  # µs since epoch
    stale: bool = False

    @property
    def sort_key(self):
        return (self.prefix.length, self.prefix.bits, self.feeder_id)


@dataclass(frozen=True, slots=True)
class RibDelta:
    feeder_id: str
    timestamp: int  # µs since epoch
    added: tuple[tuple[Prefix, PathAttributes], ...] = ()
    removed: tuple[Prefix, ...] = ()
    replaced: tuple[tuple[Prefix, PathAttributes, PathAttributes], ...] = ()
    version: int = 0  # feeder table version after applying

    def __bool__(self) -> bool:
        return bool(self.added or self.removed or self.replaced)


@dataclass(frozen=True, slots=True)
class _Published:
    version: int
    roots: tuple  # (v4 root, v6 root)
    stale_since: int | None  # µs; set while the feeder session is down


class FeederSnapshot:
    """A frozen view of one feeder's table."""

    __slots__ = ("feeder_id", "version", "_roots", "stale_since", "timestamp")

    def __init__(self, feeder_id: str, pub: _Published, timestamp: int) -> None:
        self.feeder_id = feeder_id
        self.version = pub.version
        self._roots = pub.roots
        self.stale_since = pub.stale_since
        self.timestamp = timestamp

    def _root(self, family: Family):
        return self._roots[0] if family is Family.IPV4 else self._roots[1]

    def entries(self) -> Iterator[RibEntry]:
        for family in (Family.IPV4, Family.IPV6):
            for _, _, entry in ptrie.items(self._root(family)):
                yield self._decorate(entry)

    def _decorate(self, entry: RibEntry) -> RibEntry:
        # entries at or past the mark were re-learned by a newer session and
        # render fresh; only the inherited remainder is stale
        if (
            self.stale_since is not None
            and not entry.stale
            and entry.received_at < self.stale_since
        ):
            return replace(entry, stale=True)
        return entry

    def get(self, prefix: Prefix) -> RibEntry | None:
        entry = ptrie.get(self._root(prefix.family), prefix.bits, prefix.length)
        return self._decorate(entry) if entry is not None else None

    def exact(self, prefix: Prefix) -> list[RibEntry]:
        entry = self.get(prefix)
        return [entry] if entry is not None else []

    def more_specifics(self, prefix: Prefix) -> list[RibEntry]:
        out = []
        for bits, length, entry in ptrie.subtree(self._root(prefix.family), prefix.bits, prefix.length):
            if length > prefix.length:
                out.append(self._decorate(entry))
        return out

    def less_specifics(self, prefix: Prefix) -> list[RibEntry]:
        out = []
        for depth, entry in ptrie.walk_path(self._root(prefix.family), prefix.bits, prefix.length):
            if depth < prefix.length:
                out.append(self._decorate(entry))
        return out

    def covering(self, prefix: Prefix) -> list[RibEntry]:
        """Exact + less specific: every entry whose prefix covers the argument."""
        return [
            self._decorate(entry)
            for _, entry in ptrie.walk_path(self._root(prefix.family), prefix.bits, prefix.length)
        ]

    def best_match(self, prefix: Prefix) -> RibEntry | None:
        """Longest-match covering entry."""
        best = None
        for _, entry in ptrie.walk_path(self._root(prefix.family), prefix.bits, prefix.length):
            best = entry
        return self._decorate(best) if best is not None else None

    def count(self) -> int:
        return ptrie.count(self._roots[0]) + ptrie.count(self._roots[1])


class FeederRib:
    """One feeder's table.  ``apply`` must be called from a single writer context."""

    def __init__(self, feeder_id: str) -> None:
        self.feeder_id = feeder_id
        self._pub = _Published(0, (ptrie.EMPTY, ptrie.EMPTY), None)

    # -- reader side ----------------------------------------------------

    def published(self) -> _Published:
        return self._pub

    def snapshot(self, timestamp: int) -> FeederSnapshot:
        return FeederSnapshot(self.feeder_id, self._pub, timestamp)

    @property
    def version(self) -> int:
        return self._pub.version

    # -- writer side ----------------------------------------------------

    def apply(self, update: UpdateMessage, received_at: int) -> RibDelta:
        """Apply one UPDATE; withdraws processed before announcements."""
        pub = self._pub
        roots = list(pub.roots)
        added: list[tuple[Prefix, PathAttributes]] = []
        removed: list[Prefix] = []
        replaced: list[tuple[Prefix, PathAttributes, PathAttributes]] = []

        for prefix in update.withdrawn_all:
            idx = 0 if prefix.family is Family.IPV4 else 1
            old = ptrie.get(roots[idx], prefix.bits, prefix.length)
            if old is not None:
                roots[idx] = ptrie.delete(roots[idx], prefix.bits, prefix.length)
                removed.append(prefix)

        attrs = update.path_attributes
        for prefix in update.announced:
            idx = 0 if prefix.family is Family.IPV4 else 1
            old = ptrie.get(roots[idx], prefix.bits, prefix.length)
            entry = RibEntry(self.feeder_id, prefix, attrs, received_at)
            roots[idx] = ptrie.set_(roots[idx], prefix.bits, prefix.length, entry)
            if old is None:
                added.append((prefix, attrs))
            else:
                # re-announcement always replaces: the receipt time moves even
                # when the attributes are unchanged
                replaced.append((prefix, old.attributes, attrs))

        version = pub.version + 1
        self._pub = _Published(version, (roots[0], roots[1]), pub.stale_since)
        return RibDelta(
            feeder_id=self.feeder_id,
            timestamp=received_at,
            added=tuple(added),
            removed=tuple(removed),
            replaced=tuple(replaced),
            version=version,
        )

    def mark_stale(self, timestamp: int) -> None:
        pub = self._pub
        if pub.stale_since is None:
            self._pub = _Published(pub.version + 1, pub.roots, timestamp)

    def clear_stale_flag(self) -> None:
        pub = self._pub
        if pub.stale_since is not None:
            self._pub = _Published(pub.version + 1, pub.roots, None)

    def purge(self) -> RibDelta:
        """Drop the whole table (post-dump stale eviction)."""
        pub = self._pub
        removed = tuple(
            entry.prefix
            for root in pub.roots
            for _, _, entry in ptrie.items(root)
        )
        version = pub.version + 1
        self._pub = _Published(version, (ptrie.EMPTY, ptrie.EMPTY), pub.stale_since)
        return RibDelta(self.feeder_id, 0, removed=removed, version=version)

    def purge_stale(self, timestamp: int = 0) -> RibDelta:
        """Evict only entries inherited from a dead session.

        Entries received after ``stale_since`` came from a re-established
        session and survive; once nothing older remains the flag is cleared.
        No-op when the feeder was never marked stale.
        """
        pub = self._pub
        if pub.stale_since is None:
            return RibDelta(self.feeder_id, timestamp, version=pub.version)
        cutoff = pub.stale_since
        roots = list(pub.roots)
        removed: list[Prefix] = []
        for idx in (0, 1):
            doomed = [
                entry.prefix
                for _, _, entry in ptrie.items(roots[idx])
                if entry.received_at < cutoff
            ]
            for prefix in doomed:
                roots[idx] = ptrie.delete(roots[idx], prefix.bits, prefix.length)
            removed.extend(doomed)
        version = pub.version + 1
        self._pub = _Published(version, (roots[0], roots[1]), None)
        return RibDelta(
            self.feeder_id, timestamp, removed=tuple(removed), version=version
        )


class Rib:
    """All feeders' tables, keyed by feeder id."""

    def __init__(self) -> None:
        self._feeders: dict[str, FeederRib] = {}

    def feeder(self, feeder_id: str) -> FeederRib:
        rib = self._feeders.get(feeder_id)
        if rib is None:
            rib = self._feeders[feeder_id] = FeederRib(feeder_id)
        return rib

    def feeder_ids(self) -> list[str]:
        return sorted(self._feeders)

    def snapshots(self, scope: str | None = None, timestamp: int = 0) -> list[FeederSnapshot]:
        """One frozen view per feeder; ``scope`` narrows to a single feeder id."""
        if scope is not None:
            return [self._feeders[scope].snapshot(timestamp)] if scope in self._feeders else []
        return [rib.snapshot(timestamp) for _, rib in sorted(self._feeders.items())]

    def snapshot(self, scope: str | None = None, timestamp: int = 0) -> tuple[tuple[RibEntry, ...], int]:
        """Immutable entry set + the snapshot timestamp."""
        entries: list[RibEntry] = []
        for snap in self.snapshots(scope, timestamp):
            entries.extend(snap.entries())
        entries.sort(key=lambda e: e.sort_key)
        return tuple(entries), timestamp

    def lookup(self, prefix: Prefix, mode: str, scope: str | None = None, timestamp: int = 0) -> list[RibEntry]:
        """Table entries related to ``prefix``, sorted by (length, address, feeder)."""
        out: list[RibEntry] = []
        for snap in self.snapshots(scope, timestamp):
            if mode == "exact":
                out.extend(snap.exact(prefix))
            elif mode == "more_specifics":
                out.extend(snap.more_specifics(prefix))
            elif mode == "less_specifics":
                out.extend(snap.less_specifics(prefix))
            elif mode == "all":
                out.extend(snap.less_specifics(prefix))
                out.extend(snap.exact(prefix))
                out.extend(snap.more_specifics(prefix))
            else:
                raise ValueError(f"unknown lookup mode {mode!r}")
        out.sort(key=lambda e: e.sort_key)
        return out


def apply_update(rib: Rib, feeder_id: str, update: UpdateMessage, received_at: int) -> RibDelta:
    """Apply one parsed UPDATE to a feeder's table, returning the delta."""
    return rib.feeder(feeder_id).apply(update, received_at)
