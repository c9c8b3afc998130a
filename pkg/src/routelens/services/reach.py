"""Subnet reachability: a per-feeder matrix for one watched prefix.

A feeder reaches the prefix when its table holds the prefix itself or any
covering supernet; each row cites the longest-match entry.  Whether a
default route (0.0.0.0/0, ::/0) counts as coverage is an operator choice,
exposed as ``include_default``.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..rce.rib import FeederSnapshot, Rib, RibEntry
from ..wire.prefix import Prefix
from .flap import attributes_digest


@dataclass(frozen=True, slots=True)
class ReachabilityRow:
    feeder_id: str
    reachable: bool
    via: Prefix | None  # longest-match entry, when reachable
    entry: RibEntry | None  # the cited table entry itself
    changed_at: int  # µs of the last observed row change


@dataclass(frozen=True, slots=True)
class ReachabilityChange:
    """A row flip, suitable for alert-rule evaluation."""

    prefix: Prefix  # the watched prefix
    feeder_id: str
    reachable: bool
    via: Prefix | None
    timestamp: int  # µs
    was_reachable: bool


def best_covering(
    snapshot: FeederSnapshot, prefix: Prefix, include_default: bool = True
) -> RibEntry | None:
    """Longest-match covering entry, optionally ignoring the default route."""
    best = None
    for entry in snapshot.covering(prefix):
        if not include_default and entry.prefix.length == 0:
            continue
        best = entry  # covering() yields shortest first
    return best


def subnet_reachability(
    rib: Rib,
    prefix: Prefix,
    feeder_ids,
    include_default: bool = True,
    timestamp: int = 0,
) -> list[ReachabilityRow]:
    """One row per listed feeder, from fresh table snapshots."""
    rows = []
    for feeder_id in sorted(feeder_ids):
        snap = rib.feeder(feeder_id).snapshot(timestamp)
        entry = best_covering(snap, prefix, include_default)
        rows.append(
            ReachabilityRow(
                feeder_id=feeder_id,
                reachable=entry is not None,
                via=entry.prefix if entry else None,
                entry=entry,
                changed_at=entry.received_at if entry else timestamp,
            )
        )
    return rows


def _row_identity(row: ReachabilityRow) -> tuple:
    if row.entry is None:
        return (False, None, None)
    return (True, row.via, attributes_digest(row.entry.attributes))


class ReachabilityTracker:
    """Live matrix for one prefix; recomputes rows as feeders change."""

    def __init__(
        self,
        rib: Rib,
        prefix: Prefix,
        feeder_ids,
        include_default: bool = True,
        now: int = 0,
    ) -> None:
        self.rib = rib
        self.prefix = prefix
        self.include_default = include_default
        self._rows: dict[str, ReachabilityRow] = {
            row.feeder_id: row
            for row in subnet_reachability(rib, prefix, feeder_ids, include_default, now)
        }

    @property
    def feeder_ids(self) -> list[str]:
        return sorted(self._rows)

    def rows(self) -> list[ReachabilityRow]:
        return [self._rows[f] for f in sorted(self._rows)]

    def add_feeder(self, feeder_id: str, now: int) -> ReachabilityRow:
        row = subnet_reachability(
            self.rib, self.prefix, [feeder_id], self.include_default, now
        )[0]
        self._rows[feeder_id] = row
        return row

    def drop_feeder(self, feeder_id: str) -> None:
        self._rows.pop(feeder_id, None)

    def refresh(self, feeder_id: str, now: int) -> ReachabilityChange | None:
        """Recompute one feeder's row; a change is reported, None otherwise."""
        old = self._rows.get(feeder_id)
        if old is None:
            return None
        snap = self.rib.feeder(feeder_id).snapshot(now)
        entry = best_covering(snap, self.prefix, self.include_default)
        new = ReachabilityRow(
            feeder_id=feeder_id,
            reachable=entry is not None,
            via=entry.prefix if entry else None,
            entry=entry,
            changed_at=now,
        )
        if _row_identity(new) == _row_identity(old):
            return None
        self._rows[feeder_id] = new
        return ReachabilityChange(
            prefix=self.prefix,
            feeder_id=feeder_id,
            reachable=new.reachable,
            via=new.via,
            timestamp=now,
            was_reachable=old.reachable,
        )
