"""Route-flap detection.

Consecutive routing events for one (feeder, prefix) pair are classified
pairwise into the classic update-dynamics taxonomy:

* announce after announce, identical attributes  -> ``AADup``
* announce after announce, different attributes  -> ``AADiff``
* announce after withdraw, re-announcing the last-known attributes -> ``WADup``
* announce after withdraw with new attributes    -> ``WADiff``
* withdraw after withdraw                        -> ``WWDup``

A withdraw following an announce is the normal retirement of a live route
and classifies as nothing, as does the first event ever seen for a prefix.
When the number of classified transitions inside a sliding window reaches
the threshold, one :class:`FlapEvent` is emitted and the window log is
cleared; the pairwise predecessor state survives the reset so a sustained
storm keeps producing events window by window.

Attribute identity is a digest over AS_PATH, NEXT_HOP, MED and COMMUNITIES.
LOCAL_PREF does not propagate on external sessions and ORIGIN never varies
independently in practice, so neither participates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..wire.messages import PathAttributes, UpdateMessage
from ..wire.prefix import Prefix

AADUP = "AADup"
AADIFF = "AADiff"
WADUP = "WADup"
WADIFF = "WADiff"
WWDUP = "WWDup"

#: Classification vocabulary, in dominance tie-break order.
CLASSES = (AADUP, AADIFF, WADUP, WADIFF, WWDUP)

DEFAULT_THRESHOLD = 3
DEFAULT_WINDOW_US = 60_000_000


def attributes_digest(attrs: PathAttributes) -> bytes:
    """Announcement identity for duplicate detection."""
    h = hashlib.sha256()
    for seg_type, asns in attrs.as_path or ():
        h.update(bytes((seg_type, len(asns) & 0xFF)))
        for asn in asns:
            h.update(asn.to_bytes(4, "big"))
    next_hop = attrs.next_hop
    mp = attrs.mp_reach
    if mp is not None and mp.next_hop:
        next_hop = mp.next_hop
    h.update(b"\x00" + (next_hop or b""))
    med = attrs.med
    h.update(b"\x01" + (b"" if med is None else med.to_bytes(4, "big")))
    h.update(b"\x02")
    for community in attrs.communities or ():
        h.update(community.to_bytes(4, "big"))
    return h.digest()


@dataclass(frozen=True, slots=True)
class Transition:
    """One observed routing event for the tracked prefix."""

    timestamp: int  # µs
    kind: str  # "A" | "W"
    digest: bytes | None  # announcement identity; None for withdrawals
    classified: str | None  # CLASSES member, or None for unclassifiable legs


@dataclass(frozen=True, slots=True)
class FlapEvent:
    feeder_id: str
    prefix: Prefix
    flap_type: str  # dominant class within the window
    occurrences: int  # classified transitions that triggered the emission
    class_counts: tuple[tuple[str, int], ...]  # per-class breakdown, sorted
    first_timestamp: int  # µs of the oldest contributing transition
    last_timestamp: int  # µs of the newest (the emission instant)


@dataclass
class FlapState:
    """Per-(feeder, prefix) classification state."""

    feeder_id: str
    prefix: Prefix
    window_us: int = DEFAULT_WINDOW_US
    threshold: int = DEFAULT_THRESHOLD
    # recent transitions, sorted by timestamp, pruned to the window
    log: list[Transition] = field(default_factory=list)
    # lifetime per-class totals (never reset)
    counters: dict[str, int] = field(default_factory=dict)
    # pairwise predecessor — survives window resets
    prev_kind: str | None = None
    prev_digest: bytes | None = None
    # digest of the most recent announcement, for the WADup re-announce test
    last_announced: bytes | None = None

    def prune(self, now: int) -> None:
        cutoff = now - self.window_us
        if self.log and self.log[0].timestamp <= cutoff:
            self.log = [t for t in self.log if t.timestamp > cutoff]


def _classify(state: FlapState, kind: str, digest: bytes | None) -> str | None:
    if state.prev_kind is None:
        return None
    if kind == "A":
        if state.prev_kind == "A":
            return AADUP if digest == state.prev_digest else AADIFF
        if state.last_announced is not None and digest == state.last_announced:
            return WADUP
        return WADIFF
    if state.prev_kind == "W":
        return WWDUP
    return None  # withdraw of a live route: not a flap signal


def classify_transition(
    state: FlapState, kind: str, timestamp: int, digest: bytes | None = None
) -> FlapEvent | None:
    """Record one event, returning a FlapEvent when the window fills.

    ``kind`` is "A" for an announcement (with its attribute ``digest``)
    or "W" for a withdrawal.
    """
    if kind not in ("A", "W"):
        raise ValueError(f"transition kind must be 'A' or 'W', not {kind!r}")
    label = _classify(state, kind, digest)
    state.prev_kind = kind
    state.prev_digest = digest
    if kind == "A":
        state.last_announced = digest
    state.log.append(Transition(timestamp, kind, digest, label))
    state.prune(timestamp)
    if label is None:
        return None
    state.counters[label] = state.counters.get(label, 0) + 1
    classified = [t for t in state.log if t.classified is not None]
    if len(classified) < state.threshold:
        return None
    counts: dict[str, int] = {}
    for t in classified:
        counts[t.classified] = counts.get(t.classified, 0) + 1
    dominant = max(CLASSES, key=lambda c: (counts.get(c, 0), -CLASSES.index(c)))
    event = FlapEvent(
        feeder_id=state.feeder_id,
        prefix=state.prefix,
        flap_type=dominant,
        occurrences=len(classified),
        class_counts=tuple(sorted(counts.items())),
        first_timestamp=classified[0].timestamp,
        last_timestamp=classified[-1].timestamp,
    )
    state.log.clear()
    return event


class FlapTracker:
    """Classifies every (feeder, prefix) stream of a collector."""

    def __init__(self, threshold: int = DEFAULT_THRESHOLD, window_us: int = DEFAULT_WINDOW_US):
        self.threshold = threshold
        self.window_us = window_us
        self._states: dict[tuple[str, int, int, int], FlapState] = {}

    def state_for(self, feeder_id: str, prefix: Prefix) -> FlapState:
        key = (feeder_id, prefix.family.value, prefix.length, prefix.bits)
        state = self._states.get(key)
        if state is None:
            state = FlapState(
                feeder_id, prefix, window_us=self.window_us, threshold=self.threshold
            )
            self._states[key] = state
        return state

    def observe(
        self, feeder_id: str, update: UpdateMessage, received_at: int
    ) -> list[FlapEvent]:
        """Feed one UPDATE; withdrawals are processed before announcements."""
        events = []
        for prefix in update.withdrawn_all:
            event = classify_transition(
                self.state_for(feeder_id, prefix), "W", received_at
            )
            if event is not None:
                events.append(event)
        announced = update.announced
        if announced:
            digest = attributes_digest(update.path_attributes)
            for prefix in announced:
                event = classify_transition(
                    self.state_for(feeder_id, prefix), "A", received_at, digest
                )
                if event is not None:
                    events.append(event)
        return events

    def tracked_count(self) -> int:
        return len(self._states)
