"""Collector wiring: config, detector loop, stale eviction, metrics."""

import json
import os

import pytest

from routelens.clock import SteppedClock, settle
from routelens.mim.filters import FilterSpec
from routelens.services.alerts import AlertRule
from routelens.system import DETECTOR_CHANNEL, Collector, CollectorConfig
from routelens.wire.messages import (
    Attribute,
    KeepaliveMessage,
    PathAttributes,
    UpdateMessage,
)
from routelens.wire.prefix import Prefix

from conftest import SIM_FEEDER, collector_config, running_collector
from test_session import FeedClient

pytestmark = pytest.mark.anyio

T0 = 1_700_000_000


def announce_msg(prefixes, origin_as, first_as=65010):
    attrs = PathAttributes((
        Attribute.origin(0),
        Attribute.as_path(((2, (first_as, origin_as)),)),
        Attribute.next_hop(bytes([10, 9, 9, 1])),
    ))
    return UpdateMessage(withdrawn=(), path_attributes=attrs,
                         nlri=tuple(Prefix.parse(p) for p in prefixes))


def withdraw_msg(prefixes):
    return UpdateMessage(withdrawn=tuple(Prefix.parse(p) for p in prefixes),
                         path_attributes=PathAttributes(), nlri=())


async def push(clock: SteppedClock, seconds: float, step: float = 20.0):
    remaining = seconds
    while remaining > 0:
        clock.advance(min(step, remaining))
        remaining -= step
        await settle(25)


def rule(rule_id, trigger, prefix, mode="exact", owner="ops"):
    return AlertRule(rule_id=rule_id, owner=owner, trigger=trigger,
                     subject=Prefix.parse(prefix), subject_mode=mode,
                     sinks=({"kind": "inbox"},))


class TestConfig:
    def test_defaults(self):
        config = CollectorConfig.from_dict({})
        assert config.bgp_bind == ("0.0.0.0", 1179)
        assert config.control_bind == ("127.0.0.1", 1180)
        assert config.http_bind == ("127.0.0.1", 8080)
        assert config.update_window == 300
        assert config.rib_interval == 7200
        assert config.purge_stale is False
        assert config.ingest_after_dump is True
        assert config.feeders == ()

    def test_nested_sections(self):
        config = CollectorConfig.from_dict({
            "bgp": {"bind": "127.0.0.1", "port": 179},
            "dump": {"update_window": 60, "rib_interval": 600},
            "flap": {"threshold": 5, "window_s": 120},
            "feeders": [SIM_FEEDER],
            "purge_stale": True,
        })
        assert config.bgp_bind == ("127.0.0.1", 179)
        assert config.update_window == 60
        assert config.rib_interval == 600
        assert config.flap_threshold == 5
        assert config.flap_window_s == 120
        assert config.purge_stale is True
        assert config.feeders[0].feeder_id == "sim-a"

    def test_env_overrides(self, tmp_path, monkeypatch):
        path = tmp_path / "collector.json"
        path.write_text(json.dumps({"bgp": {"bind": "127.0.0.1", "port": 179}}))
        monkeypatch.setenv("ROUTELENS_BGP_PORT", "2179")
        monkeypatch.setenv("ROUTELENS_TOKEN_FILE", "/etc/routelens/tokens.json")
        config = CollectorConfig.from_file(path)
        assert config.bgp_bind == ("127.0.0.1", 2179)  # host kept, port replaced
        assert config.token_file == "/etc/routelens/tokens.json"

    def test_no_env_no_change(self):
        for var in ("ROUTELENS_BGP_PORT", "ROUTELENS_CONTROL_PORT",
                    "ROUTELENS_HTTP_PORT", "ROUTELENS_TOKEN_FILE"):
            assert var not in os.environ
        config = CollectorConfig.from_dict({})
        assert config.with_env_overrides() is config


class TestFeederNaming:
    def make(self, tmp_path, feeders=None):
        return Collector(collector_config(tmp_path, feeders or [SIM_FEEDER]),
                         clock=SteppedClock(float(T0)))

    def test_unique_expected_as_names_archive_routes(self, tmp_path):
        collector = self.make(tmp_path)
        assert collector._resolve_feeder(65010, "192.0.2.77") == "sim-a"

    def test_unknown_peer_falls_back_to_generic_name(self, tmp_path):
        collector = self.make(tmp_path)
        assert collector._resolve_feeder(64999, "192.0.2.77") == "AS64999@192.0.2.77"

    def test_ambiguous_expected_as_not_guessed(self, tmp_path):
        collector = self.make(tmp_path, feeders=[
            SIM_FEEDER,
            {"feeder_id": "sim-b", "local_as": 64512, "expected_peer_as": 65010},
        ])
        assert collector._resolve_feeder(65010, "192.0.2.77") == "AS65010@192.0.2.77"

    def test_peer_info_unknown_feeder_is_zeroed(self, tmp_path):
        collector = self.make(tmp_path)
        assert collector.peer_info("sim-a") == (b"\0\0\0\0", b"\0\0\0\0", 0)


class TestLifecycle:
    async def test_start_installs_detector_fabric(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER]) as collector:
            assert DETECTOR_CHANNEL in collector.mim.channels
            assert {"svc.detectors.v4", "svc.detectors.v6"} <= set(
                collector.mim.index.ids())
            host, port = collector.listener.bound_address
            assert port != 0
        assert DETECTOR_CHANNEL not in collector.mim.channels

    async def test_peer_identity_cached_across_session_loss(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER]) as collector:
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            await settle(20)
            bgp_id, addr, peer_as = collector.peer_info("sim-a")
            assert peer_as == 65010
            assert bgp_id == b"\x0a\x09\x09\x01"
            assert addr == bytes([127, 0, 0, 1])
            client.close()
            await settle(20)
            assert collector.peer_info("sim-a")[2] == 65010  # cache survives
            # the live session also taught the archive resolver this peer
            assert collector._resolve_feeder(65010, "127.0.0.1") == "sim-a"


class TestDetectors:
    async def test_hijack_announcement_reaches_inbox(self, tmp_path):
        registry_file = tmp_path / "registry.json"
        registry_file.write_text(json.dumps({"entries": [
            {"prefix": "192.0.2.0/24", "origins": [65001], "owner": "victim"},
        ]}))
        async with running_collector(tmp_path, [SIM_FEEDER],
                                     registry_file=str(registry_file)) as collector:
            collector.put_rule(rule("watch-hijack", "hijack", "192.0.2.0/24",
                                    mode="all", owner="alice"))
            alerts = []
            collector.hijack_hooks.append(alerts.append)

            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["192.0.2.0/24"], origin_as=66666))
            await client.writer.drain()
            await settle(40)

            assert len(alerts) == 1
            assert alerts[0].hijack_class == "FalseOrigin"
            assert alerts[0].origin_as == 66666
            inbox = collector.engine.inbox(owner="alice")
            assert len(inbox) == 1
            payload = inbox[0].payload
            assert payload["event_type"] == "hijack"
            assert payload["subject"] == "192.0.2.0/24"
            assert payload["detail"]["victim_as"] == [65001]
            assert collector.metrics().get("hijack_empty_path", 0) == 0
            client.close()

    async def test_flap_script_reaches_inbox(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER]) as collector:
            collector.put_rule(rule("watch-flap", "flap", "10.7.0.0/16",
                                    owner="bob"))
            events = []
            collector.flap_hooks.append(events.append)

            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            script = [announce_msg(["10.7.0.0/16"], 64601),
                      withdraw_msg(["10.7.0.0/16"]),
                      announce_msg(["10.7.0.0/16"], 64601),
                      withdraw_msg(["10.7.0.0/16"]),
                      announce_msg(["10.7.0.0/16"], 64601),
                      announce_msg(["10.7.0.0/16"], 64601)]
            for msg in script:
                client.send(msg)
            await client.writer.drain()
            await settle(60)

            assert len(events) == 1
            assert events[0].flap_type == "WADup"
            inbox = collector.engine.inbox(owner="bob")
            assert len(inbox) == 1
            assert inbox[0].payload["event_type"] == "flap"
            client.close()

    async def test_reachability_rules_follow_longest_match(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER]) as collector:
            collector.put_rule(rule("dark", "unreachable", "10.5.0.0/24",
                                    owner="noc"))
            collector.put_rule(rule("lit", "reachable-again", "10.5.0.0/24",
                                    owner="noc"))
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()

            # unrelated announce must not move the matrix
            client.send(announce_msg(["10.99.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)
            assert collector.engine.inbox(owner="noc") == []

            client.send(announce_msg(["10.5.0.0/16"], 64601))  # covering
            await client.writer.drain()
            await settle(40)
            lit = collector.engine.inbox(owner="noc")
            assert [n.rule_id for n in lit] == ["lit"]
            assert lit[0].payload["detail"]["via"] == "10.5.0.0/16"

            client.send(withdraw_msg(["10.5.0.0/16"]))
            await client.writer.drain()
            await settle(40)
            all_n = collector.engine.inbox(owner="noc")
            assert sorted(n.rule_id for n in all_n) == ["dark", "lit"]
            client.close()

    async def test_watcher_lifecycle_follows_rules(self, tmp_path):
        collector = Collector(collector_config(tmp_path, [SIM_FEEDER]),
                              clock=SteppedClock(float(T0)))
        collector.put_rule(rule("r-dark", "unreachable", "10.5.0.0/24"))
        collector.put_rule(rule("r-lit", "reachable-again", "10.5.0.0/24"))
        # both rules share one matrix — a transition must be observed once
        assert list(collector._watchers) == ["10.5.0.0/24"]
        assert collector._watchers["10.5.0.0/24"].feeder_ids == ["sim-a"]
        collector.remove_rule("r-dark")
        assert "10.5.0.0/24" in collector._watchers  # still referenced
        # replacing the survivor's trigger drops the matrix
        collector.put_rule(rule("r-lit", "flap", "10.5.0.0/24"))
        assert collector._watchers == {}


class TestStaleEviction:
    async def test_purge_at_rib_boundary_with_synthetic_withdraws(self, tmp_path):
        async with running_collector(
            tmp_path, [SIM_FEEDER],
            dump={"update_window": 60, "rib_interval": 120},
        ) as collector:
            spy = collector.mim.open_channel("gw.spy", capacity=64)
            collector.mim.configure_filter(FilterSpec(
                filter_id="gw.spy.f", scope="*",
                prefix=Prefix.parse("10.8.0.0/16"),
                modes=frozenset({"exact"}), channel_id="gw.spy"))

            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16", "10.9.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)
            assert spy.queue.qsize() == 1  # the live announce
            spy.queue.get_nowait()

            # entries must be strictly older than the stale mark to be evicted
            await push(collector.clock, 1.0)
            client.close()  # abrupt loss -> stale mark, no eviction yet
            await settle(40)
            snap = collector.rib.feeder("sim-a").snapshot(collector.clock.now_us())
            assert snap.count() == 2
            assert snap.stale_since is not None

            await push(collector.clock, 130.0)  # cross the RIB boundary
            snap = collector.rib.feeder("sim-a").snapshot(collector.clock.now_us())
            assert snap.count() == 0

            tagged = spy.queue.get_nowait()
            assert tagged.synthetic is True
            # the eviction batches both prefixes into one withdraw message;
            # this channel saw it because its own filter matched
            assert [str(p) for p in tagged.update.withdrawn_all] == [
                "10.8.0.0/16", "10.9.0.0/16"]
            assert tagged.matched_filter_ids == ("gw.spy.f",)
            # synthetic traffic is classified for tables but not for flaps
            state = collector.flaps.state_for("sim-a", Prefix.parse("10.8.0.0/16"))
            assert [t.kind for t in state.log] == ["A"]

    async def test_purge_immediately_when_configured(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER],
                                     purge_stale=True) as collector:
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)
            await push(collector.clock, 1.0)
            client.close()
            await settle(40)
            snap = collector.rib.feeder("sim-a").snapshot(collector.clock.now_us())
            assert snap.count() == 0

    async def test_relearned_entries_survive_boundary_purge(self, tmp_path):
        async with running_collector(
            tmp_path, [SIM_FEEDER],
            dump={"update_window": 60, "rib_interval": 120},
        ) as collector:
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16", "10.9.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)
            await push(collector.clock, 1.0)
            client.close()
            await settle(40)

            # reconnect and re-announce one of the two before the boundary
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16"], 64602))
            await client.writer.drain()
            await settle(40)

            # cross the first RIB boundary (rib_interval after collector
            # start); keepalives keep the second session inside its hold
            # time the whole way, so the purge runs against a live session
            for _ in range(4):
                await push(collector.clock, 30.0)
                client.send(KeepaliveMessage())
                await client.writer.drain()
            await push(collector.clock, 5.0)
            snap = collector.rib.feeder("sim-a").snapshot(collector.clock.now_us())
            live = {str(e.prefix) for e in snap.entries()}
            assert live == {"10.8.0.0/16"}
            assert snap.stale_since is None  # purge consumed the mark
            client.close()


class TestDumpAndIngest:
    async def test_boundary_dump_feeds_the_historic_index(self, tmp_path):
        async with running_collector(
            tmp_path, [SIM_FEEDER],
            dump={"update_window": 60, "rib_interval": 120},
        ) as collector:
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16"], 64601))
            client.send(KeepaliveMessage())
            await client.writer.drain()
            await settle(40)
            assert collector.store.coverage() is None

            await push(collector.clock, 260.0)

            names = sorted(p.name for p in
                           (tmp_path / "archive").iterdir())
            assert any(n.startswith("updates.") for n in names)
            assert any(n.startswith("rib.") for n in names)
            cov = collector.store.coverage()
            assert cov is not None
            events = collector.store.query_events(
                Prefix.parse("10.8.0.0/16"), "exact", cov[0], cov[1] + 1)
            assert events and events[0].feeder_id == "sim-a"
            client.close()

    async def test_ingest_can_be_disabled(self, tmp_path):
        async with running_collector(
            tmp_path, [SIM_FEEDER],
            dump={"update_window": 60, "rib_interval": 120},
            ingest_after_dump=False,
        ) as collector:
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)
            await push(collector.clock, 260.0)
            assert collector.store.coverage() is None
            client.close()


class TestMetrics:
    async def test_counter_surface(self, tmp_path):
        async with running_collector(tmp_path, [SIM_FEEDER]) as collector:
            collector.put_rule(rule("r1", "flap", "10.0.0.0/8",
                                    mode="more_specifics"))
            client = await FeedClient.connect(collector.listener.bound_address)
            await client.establish()
            client.send(announce_msg(["10.8.0.0/16"], 64601))
            await client.writer.drain()
            await settle(40)

            out = collector.metrics()
            assert out["feeders_configured"] == 1
            assert out["sessions_established"] == 1
            assert out["rib_entries{feeder=sim-a}"] == 1
            assert out["fabric_messages_forwarded"] >= 1
            assert out["fabric_updates_applied"] >= 1
            assert out["alert_rules"] == 1
            assert out["flap_tracked_states"] == 1
            assert out["session_messages_in{feeder=sim-a}"] >= 3
            assert out["session_parse_errors{feeder=sim-a}"] == 0
            assert "archive_updates_buffered" in out or any(
                k.startswith("archive_") for k in out)
            client.close()
