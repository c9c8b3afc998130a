"""Flap classifier vs. a straight-line pairwise-rule oracle."""

import random
from collections import Counter

import pytest

from routelens.services.flap import (
    CLASSES,
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_US,
    FlapState,
    FlapTracker,
    attributes_digest,
    classify_transition,
)
from routelens.wire.messages import Attribute, PathAttributes, UpdateMessage
from routelens.wire.prefix import Family, Prefix

P = Prefix.parse("10.9.0.0/16")
T0 = 1_700_000_000 * 1_000_000


def oracle_labels(seq):
    """Pairwise rules, written as one obvious pass over the sequence."""
    labels = []
    prev = None
    last_announced = None
    for kind, digest, _ts in seq:
        if prev is None:
            labels.append(None)
        elif kind == "A" and prev[0] == "A":
            labels.append("AADup" if digest == prev[1] else "AADiff")
        elif kind == "A":  # W -> A
            if last_announced is not None and digest == last_announced:
                labels.append("WADup")
            else:
                labels.append("WADiff")
        elif prev[0] == "W":  # W -> W
            labels.append("WWDup")
        else:  # A -> W: route going away is not a flap leg
            labels.append(None)
        prev = (kind, digest)
        if kind == "A":
            last_announced = digest
    return labels


def oracle_events(seq, labels, threshold, window_us):
    """Window/threshold emission, simulated with plain lists."""
    events = []
    log = []  # (ts, label)
    for (kind, digest, ts), label in zip(seq, labels):
        log.append((ts, label))
        cutoff = ts - window_us
        log = [(t, lab) for (t, lab) in log if t > cutoff]
        if label is None:
            continue
        classified = [(t, lab) for (t, lab) in log if lab is not None]
        if len(classified) < threshold:
            continue
        counts = Counter(lab for _, lab in classified)
        dominant = max(CLASSES, key=lambda c: (counts.get(c, 0), -CLASSES.index(c)))
        events.append((ts, dominant, len(classified), classified[0][0]))
        log = []
    return events


def random_sequence(rng, n):
    digests = [bytes([d]) * 4 for d in range(3)]
    ts = T0
    seq = []
    for _ in range(n):
        ts += rng.randint(1, 40_000_000)  # up to 40s gaps: some prunes happen
        if rng.random() < 0.45:
            seq.append(("W", None, ts))
        else:
            seq.append(("A", rng.choice(digests), ts))
    return seq


def drive(seq, threshold=DEFAULT_THRESHOLD, window_us=DEFAULT_WINDOW_US):
    state = FlapState("fd-a", P, window_us=window_us, threshold=threshold)
    out = []
    for kind, digest, ts in seq:
        event = classify_transition(state, kind, ts, digest)
        if event is not None:
            out.append(event)
    return state, out


class TestPairwiseRules:
    def test_labels_match_oracle_over_random_sequences(self):
        rng = random.Random(101)
        for case in range(300):
            seq = random_sequence(rng, rng.randint(1, 40))
            # never prune, never emit: the log keeps every label
            state = FlapState("fd-a", P, window_us=10**15, threshold=10**9)
            for kind, digest, ts in seq:
                classify_transition(state, kind, ts, digest)
            got = [t.classified for t in state.log]
            assert got == oracle_labels(seq), f"case {case}"

    def test_events_match_oracle_over_random_sequences(self):
        rng = random.Random(102)
        for case in range(300):
            threshold = rng.randint(2, 5)
            window = rng.choice((30, 60, 120)) * 1_000_000
            seq = random_sequence(rng, rng.randint(1, 60))
            _, got = drive(seq, threshold=threshold, window_us=window)
            want = oracle_events(seq, oracle_labels(seq), threshold, window)
            got_rows = [(e.last_timestamp, e.flap_type, e.occurrences,
                         e.first_timestamp) for e in got]
            assert got_rows == want, f"case {case} thr={threshold} win={window}"

    def test_first_transition_never_classifies(self):
        state = FlapState("fd-a", P)
        assert classify_transition(state, "A", T0, b"x") is None
        assert state.log[0].classified is None

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            classify_transition(FlapState("fd-a", P), "announce", T0, b"x")


class TestEmission:
    def test_six_message_script_single_event(self):
        d = b"same-route-id"
        seq = [
            ("A", d, T0),
            ("W", None, T0 + 1_000_000),
            ("A", d, T0 + 2_000_000),
            ("W", None, T0 + 3_000_000),
            ("A", d, T0 + 4_000_000),
            ("A", d, T0 + 5_000_000),
        ]
        _, events = drive(seq)
        assert len(events) == 1
        event = events[0]
        assert event.flap_type == "WADup"  # two WADup legs vs one AADup
        assert event.occurrences == 3
        assert dict(event.class_counts) == {"WADup": 2, "AADup": 1}
        assert event.first_timestamp == T0 + 2_000_000
        assert event.last_timestamp == T0 + 5_000_000

    def test_dominance_ties_break_by_class_order(self):
        # one AADiff and one WADup: AADiff sits earlier in CLASSES
        seq = [
            ("A", b"d1", T0),
            ("A", b"d2", T0 + 1_000_000),   # AADiff
            ("W", None, T0 + 2_000_000),
            ("A", b"d2", T0 + 3_000_000),   # WADup
        ]
        _, events = drive(seq, threshold=2)
        assert len(events) == 1
        assert events[0].flap_type == "AADiff"

    def test_window_gap_prevents_emission(self):
        # three classifiable legs, each a window apart: log empties between
        seq = [
            ("A", b"d", T0),
            ("A", b"d", T0 + 70_000_000),    # AADup, alone in window
            ("A", b"d", T0 + 140_000_000),   # AADup, alone again
            ("A", b"d", T0 + 210_000_000),
        ]
        _, events = drive(seq)
        assert events == []

    def test_pairwise_memory_survives_window_reset(self):
        # after a long silence the next leg still classifies against prev
        state = FlapState("fd-a", P)
        classify_transition(state, "A", T0, b"d")
        classify_transition(state, "A", T0 + 600_000_000, b"d")
        assert state.log[-1].classified == "AADup"

    def test_log_cleared_but_lifetime_counters_survive_emission(self):
        d = b"d"
        seq = [("A", d, T0 + i * 1_000_000) for i in range(4)]
        state, events = drive(seq)
        assert len(events) == 1
        assert state.log == []
        assert state.counters == {"AADup": 3}

    def test_emission_can_rearm_after_clear(self):
        d = b"d"
        seq = [("A", d, T0 + i * 1_000_000) for i in range(8)]
        _, events = drive(seq)
        # legs 2-4 fire, log clears, legs 5-7 fill a fresh window and fire again
        assert len(events) == 2


class TestDigest:
    def test_same_attributes_same_digest(self):
        a = PathAttributes((Attribute.origin(0),
                            Attribute.as_path(((2, (65001, 65002)),)),
                            Attribute.next_hop(bytes([10, 0, 0, 1]))))
        b = PathAttributes((Attribute.origin(0),
                            Attribute.as_path(((2, (65001, 65002)),)),
                            Attribute.next_hop(bytes([10, 0, 0, 1]))))
        assert attributes_digest(a) == attributes_digest(b)

    @pytest.mark.parametrize("mutate", ["as_path", "next_hop", "med", "communities"])
    def test_identity_fields_change_digest(self, mutate):
        base = dict(as_path=((2, (65001, 65002)),), next_hop=bytes([10, 0, 0, 1]),
                    med=None, communities=())
        other = dict(base)
        if mutate == "as_path":
            other["as_path"] = ((2, (65001, 65003)),)
        elif mutate == "next_hop":
            other["next_hop"] = bytes([10, 0, 0, 2])
        elif mutate == "med":
            other["med"] = 50
        else:
            other["communities"] = (0x0001_0002,)

        def build(d):
            attrs = [Attribute.origin(0), Attribute.as_path(d["as_path"]),
                     Attribute.next_hop(d["next_hop"])]
            if d["med"] is not None:
                attrs.append(Attribute.med(d["med"]))
            if d["communities"]:
                attrs.append(Attribute.communities(d["communities"]))
            return PathAttributes(tuple(attrs))

        assert attributes_digest(build(base)) != attributes_digest(build(other))

    def test_mp_next_hop_takes_precedence(self):
        v6 = Prefix.parse("2001:db8::/32")
        common = (Attribute.origin(0), Attribute.as_path(((2, (65001,)),)))
        a = PathAttributes(common + (
            Attribute.next_hop(bytes([10, 0, 0, 1])),
            Attribute.mp_reach(Family.IPV6, bytes(range(16)), (v6,))))
        b = PathAttributes(common + (
            Attribute.next_hop(bytes([10, 0, 0, 2])),  # differs, but shadowed
            Attribute.mp_reach(Family.IPV6, bytes(range(16)), (v6,))))
        assert attributes_digest(a) == attributes_digest(b)

    def test_unrelated_attributes_ignored(self):
        common = (Attribute.origin(0), Attribute.as_path(((2, (65001,)),)),
                  Attribute.next_hop(bytes([10, 0, 0, 1])))
        a = PathAttributes(common)
        b = PathAttributes(common + (Attribute.local_pref(200),))
        assert attributes_digest(a) == attributes_digest(b)


class TestTracker:
    def test_withdraw_processed_before_announce_in_one_update(self):
        tracker = FlapTracker()
        attrs = PathAttributes((Attribute.origin(0),
                                Attribute.as_path(((2, (65001,)),)),
                                Attribute.next_hop(bytes([10, 0, 0, 1]))))
        seed = UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=(P,))
        tracker.observe("fd-a", seed, T0)
        # same prefix withdrawn and re-announced in one message: W leg lands
        # first, so the A leg classifies as WADup
        both = UpdateMessage(withdrawn=(P,), path_attributes=attrs, nlri=(P,))
        tracker.observe("fd-a", both, T0 + 1_000_000)
        state = tracker.state_for("fd-a", P)
        assert [t.classified for t in state.log] == [None, None, "WADup"]

    def test_states_keyed_per_feeder_and_prefix(self):
        tracker = FlapTracker()
        attrs = PathAttributes((Attribute.origin(0),
                                Attribute.as_path(((2, (65001,)),)),
                                Attribute.next_hop(bytes([10, 0, 0, 1]))))
        update = UpdateMessage(withdrawn=(), path_attributes=attrs,
                               nlri=(P, Prefix.parse("10.10.0.0/16")))
        tracker.observe("fd-a", update, T0)
        tracker.observe("fd-b", update, T0)
        assert tracker.tracked_count() == 4

    def test_tracker_emits_on_flapping_update_stream(self):
        tracker = FlapTracker()
        attrs = PathAttributes((Attribute.origin(0),
                                Attribute.as_path(((2, (65001,)),)),
                                Attribute.next_hop(bytes([10, 0, 0, 1]))))
        announce = UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=(P,))
        withdraw = UpdateMessage(withdrawn=(P,),
                                 path_attributes=PathAttributes(), nlri=())
        script = [announce, withdraw, announce, withdraw, announce, announce]
        events = []
        for i, msg in enumerate(script):
            events += tracker.observe("fd-a", msg, T0 + i * 1_000_000)
        assert len(events) == 1
        assert events[0].feeder_id == "fd-a"
        assert events[0].prefix == P
