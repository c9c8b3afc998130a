"""Prefix-hijack detection against a declarative ownership registry.

The registry maps owned prefixes to the set of AS numbers authorized to
originate them.  Every announcement is checked against the registry's
related entries:

* announced == owned           and origin unauthorized -> ``FalseOrigin``
* announced strictly inside    and origin unauthorized -> ``Covered``
* announced strictly covering  and origin unauthorized -> ``Covering``

The candidate origin set is the last AS of an AS_SEQUENCE-terminated path,
or every member of a trailing AS_SET; an alert fires only when *no*
candidate is authorized.  Announcements with no usable path cannot name an
offender: they produce a malformed-evidence alert (class ``FalseOrigin``,
origin ``None``, the announced prefix standing as its own victim entry)
when the prefix overlaps the registry at all, and otherwise only tick the
``empty_path`` counter.

Registry file schema (JSON)::

    {"entries": [{"prefix": "192.0.2.0/24", "origins": [65001], "owner": "example"}]}

``owner`` is optional and informational.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .. import ptrie
from ..mim.filters import TaggedUpdate
from ..wire.messages import SEG_SEQUENCE
from ..wire.prefix import Family, Prefix

FALSE_ORIGIN = "FalseOrigin"
COVERED = "Covered"
COVERING = "Covering"

HIJACK_CLASSES = (FALSE_ORIGIN, COVERED, COVERING)


class EmptyAsPath(Exception):
    """An announcement carried no usable AS path to extract an origin from."""


@dataclass(frozen=True, slots=True)
class HijackAlert:
    hijack_class: str  # FalseOrigin | Covered | Covering
    origin_as: int | None  # offending origin; None when the path was unusable
    announced: Prefix
    victim: Prefix
    victim_as: frozenset[int]
    feeder_id: str
    timestamp: int  # µs
    as_path: tuple[tuple[int, tuple[int, ...]], ...]  # evidence
    candidate_origins: tuple[int, ...] = ()
    malformed_evidence: bool = False


class OwnershipRegistry:
    """Owned prefixes with exact and containment lookups."""

    def __init__(self) -> None:
        self._roots: dict[Family, object] = {Family.IPV4: ptrie.EMPTY, Family.IPV6: ptrie.EMPTY}
        self._owners: dict[Prefix, str] = {}

    def add(self, prefix: Prefix, origins, owner: str = "") -> None:
        origin_set = frozenset(int(a) for a in origins)
        if not origin_set:
            raise ValueError(f"registry entry {prefix} needs at least one origin AS")
        self._roots[prefix.family] = ptrie.set_(
            self._roots[prefix.family], prefix.bits, prefix.length, (prefix, origin_set)
        )
        self._owners[prefix] = owner

    def remove(self, prefix: Prefix) -> None:
        self._roots[prefix.family] = ptrie.delete(
            self._roots[prefix.family], prefix.bits, prefix.length
        )
        self._owners.pop(prefix, None)

    def get(self, prefix: Prefix) -> frozenset[int] | None:
        hit = ptrie.get(self._roots[prefix.family], prefix.bits, prefix.length)
        return hit[1] if hit is not None else None

    def entries(self) -> list[tuple[Prefix, frozenset[int], str]]:
        out = []
        for family in (Family.IPV4, Family.IPV6):
            for _, _, (prefix, origins) in ptrie.subtree(self._roots[family], 0, 0):
                out.append((prefix, origins, self._owners.get(prefix, "")))
        out.sort(key=lambda row: row[0].sort_key)
        return out

    def __len__(self) -> int:
        return ptrie.count(self._roots[Family.IPV4]) + ptrie.count(self._roots[Family.IPV6])

    def related(self, prefix: Prefix) -> list[tuple[str, Prefix, frozenset[int]]]:
        """Registry entries the announced ``prefix`` would step on.

        Returns (hijack class, victim prefix, authorized set) triples.
        """
        root = self._roots[prefix.family]
        out: list[tuple[str, Prefix, frozenset[int]]] = []
        for depth, (victim, origins) in ptrie.walk_path(root, prefix.bits, prefix.length):
            if depth == prefix.length:
                out.append((FALSE_ORIGIN, victim, origins))
            else:  # victim is shorter: the announcement is a subnet of it
                out.append((COVERED, victim, origins))
        for _, length, (victim, origins) in ptrie.subtree(root, prefix.bits, prefix.length):
            if length > prefix.length:  # victim is longer: announcement covers it
                out.append((COVERING, victim, origins))
        return out

    # -- file form -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "OwnershipRegistry":
        registry = cls()
        for entry in doc.get("entries", []):
            registry.add(
                Prefix.parse(entry["prefix"]),
                entry["origins"],
                entry.get("owner", ""),
            )
        return registry

    @classmethod
    def load(cls, path: str | Path) -> "OwnershipRegistry":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"prefix": str(prefix), "origins": sorted(origins), "owner": owner}
                for prefix, origins, owner in self.entries()
            ]
        }


def _candidate_origins(as_path) -> tuple[int, ...]:
    if not as_path:
        raise EmptyAsPath("announcement without an AS path")
    seg_type, asns = as_path[-1]
    if not asns:
        raise EmptyAsPath("announcement with an empty trailing path segment")
    if seg_type == SEG_SEQUENCE:
        return (asns[-1],)
    return tuple(sorted(set(asns)))


def classify_announcement(
    registry: OwnershipRegistry,
    prefix: Prefix,
    as_path,
    feeder_id: str,
    timestamp: int,
    counters: dict | None = None,
) -> list[HijackAlert]:
    """Alerts for a single announced prefix."""
    path = tuple(as_path or ())
    try:
        candidates = _candidate_origins(path)
    except EmptyAsPath:
        related = registry.related(prefix)
        if not related:
            if counters is not None:
                counters["empty_path"] = counters.get("empty_path", 0) + 1
            return []
        victim_as = frozenset().union(*(origins for _, _, origins in related))
        return [
            HijackAlert(
                hijack_class=FALSE_ORIGIN,
                origin_as=None,
                announced=prefix,
                victim=prefix,
                victim_as=victim_as,
                feeder_id=feeder_id,
                timestamp=timestamp,
                as_path=path,
                malformed_evidence=True,
            )
        ]
    alerts = []
    for hijack_class, victim, origins in registry.related(prefix):
        if origins.isdisjoint(candidates):
            alerts.append(
                HijackAlert(
                    hijack_class=hijack_class,
                    origin_as=candidates[0],
                    announced=prefix,
                    victim=victim,
                    victim_as=origins,
                    feeder_id=feeder_id,
                    timestamp=timestamp,
                    as_path=path,
                    candidate_origins=candidates,
                )
            )
    return alerts


def classify_hijack(
    update: TaggedUpdate,
    registry: OwnershipRegistry,
    counters: dict | None = None,
) -> list[HijackAlert]:
    """Alerts for every prefix announced by one dispatched UPDATE.

    Withdrawals never alert.
    """
    alerts = []
    path = update.update.path_attributes.as_path or ()
    for prefix in update.update.announced:
        alerts.extend(
            classify_announcement(
                registry, prefix, path, update.feeder_id, update.received_at, counters
            )
        )
    return alerts
