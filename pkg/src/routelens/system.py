"""Collector: one process wiring sessions, archive, fabric, and detectors.

Composition (arrows are data flow)::

    feeders ──TCP──> Listener ──intake──> Mim ──channels──> consumers
                        │                  │ │
                        │                  │ └── RIB (per-feeder tables)
                        │                  └──── DumpScheduler (MRT archive)
                        └── session events ───> stale marking / peer cache

    "svc.detectors" channel ──> flap / hijack / reachability ──> RuleEngine

The detector channel subscribes to everything (0.0.0.0/0 and ::/0,
exact + more-specifics, every feeder) so each update is classified once.
Filter ids starting with ``svc.`` are reserved for the collector itself;
the gateway prefixes its session filters with ``gw.``.

Stale policy: the listener marks a feeder's table stale when its session
drops; at the next RIB dump boundary the collector evicts entries that
predate the mark (entries re-learned from a newer session survive) and
announces the eviction to subscribers as synthetic withdrawals.  With
``purge_stale`` set, eviction happens immediately on session loss instead.
"""

from __future__ import annotations

import asyncio
import ipaddress
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .clock import Clock, SystemClock
from .hdsrs.store import Store, default_feeder_resolver
from .mim.control import ControlServer
from .mim.filters import FilterSpec, Mim
from .rce.config import FeederConfig
from .rce.dumper import DumpScheduler
from .rce.rib import Rib, RibDelta
from .rce.session import Listener
from .services.alerts import AlertRule, RuleEngine
from .services.flap import (
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_US,
    FlapTracker,
)
from .services.hijack import OwnershipRegistry, classify_hijack
from .services.reach import ReachabilityTracker
from .wire.messages import Attribute, PathAttributes, UpdateMessage
from .wire.prefix import Family, Prefix

log = logging.getLogger(__name__)

DETECTOR_CHANNEL = "svc.detectors"
# conservative per-message withdraw batch sizes (stay under the 4096B cap)
_WITHDRAW_BATCH = {Family.IPV4: 500, Family.IPV6: 200}


@dataclass(frozen=True)
class CollectorConfig:
    """Process configuration; see README for the JSON file schema."""

    bgp_bind: tuple[str, int] = ("0.0.0.0", 1179)
    control_bind: tuple[str, int] = ("127.0.0.1", 1180)
    http_bind: tuple[str, int] = ("127.0.0.1", 8080)
    archive_dir: str = "var/archive"
    index_dir: str = "var/index"
    state_dir: str = "var/state"
    token_file: str | None = None
    registry_file: str | None = None
    feeders: tuple[FeederConfig, ...] = ()
    update_window: int = 300
    rib_interval: int = 7200
    flap_threshold: int = DEFAULT_THRESHOLD
    flap_window_s: int = DEFAULT_WINDOW_US // 1_000_000
    purge_stale: bool = False
    ingest_after_dump: bool = True
    collector_bgp_id: str = "0.0.0.0"

    @staticmethod
    def from_dict(raw: dict) -> "CollectorConfig":
        def bind(key: str, default: tuple[str, int]) -> tuple[str, int]:
            doc = raw.get(key)
            if doc is None:
                return default
            return (str(doc.get("bind", default[0])), int(doc.get("port", default[1])))

        dump = raw.get("dump", {})
        flap = raw.get("flap", {})
        return CollectorConfig(
            bgp_bind=bind("bgp", ("0.0.0.0", 1179)),
            control_bind=bind("control", ("127.0.0.1", 1180)),
            http_bind=bind("http", ("127.0.0.1", 8080)),
            archive_dir=raw.get("archive_dir", "var/archive"),
            index_dir=raw.get("index_dir", "var/index"),
            state_dir=raw.get("state_dir", "var/state"),
            token_file=raw.get("token_file"),
            registry_file=raw.get("registry_file"),
            feeders=tuple(FeederConfig.from_dict(f) for f in raw.get("feeders", ())),
            update_window=int(dump.get("update_window", 300)),
            rib_interval=int(dump.get("rib_interval", 7200)),
            flap_threshold=int(flap.get("threshold", DEFAULT_THRESHOLD)),
            flap_window_s=int(flap.get("window_s", DEFAULT_WINDOW_US // 1_000_000)),
            purge_stale=bool(raw.get("purge_stale", False)),
            ingest_after_dump=bool(raw.get("ingest_after_dump", True)),
            collector_bgp_id=raw.get("collector_bgp_id", "0.0.0.0"),
        )

    @staticmethod
    def from_file(path: str | Path) -> "CollectorConfig":
        raw = json.loads(Path(path).read_text())
        config = CollectorConfig.from_dict(raw)
        return config.with_env_overrides()

    def with_env_overrides(self) -> "CollectorConfig":
        """ROUTELENS_{BGP,CONTROL,HTTP}_PORT and ROUTELENS_TOKEN_FILE win."""
        changes: dict = {}
        for env, attr in (
            ("ROUTELENS_BGP_PORT", "bgp_bind"),
            ("ROUTELENS_CONTROL_PORT", "control_bind"),
            ("ROUTELENS_HTTP_PORT", "http_bind"),
        ):
            value = os.environ.get(env)
            if value is not None:
                host = getattr(self, attr)[0]
                changes[attr] = (host, int(value))
        token = os.environ.get("ROUTELENS_TOKEN_FILE")
        if token is not None:
            changes["token_file"] = token
        if not changes:
            return self
        from dataclasses import replace

        return replace(self, **changes)


class Collector:
    """Everything behind the network surfaces, as one object.

    ``start()`` binds sockets and launches the dump / detector loops;
    ``stop()`` tears all of it down.  The HTTP gateway and the CLI hold a
    reference to this object and nothing else.
    """

    def __init__(self, config: CollectorConfig, *, clock: Clock | None = None) -> None:
        self.config = config
        self.clock = clock or SystemClock()
        self.rib = Rib()
        # (peer AS, peer address) -> configured feeder id, learned from sessions
        self._peer_names: dict[tuple[int, str], str] = {}
        self.store = Store(config.index_dir, feeder_resolver=self._resolve_feeder)
        self.dumper = DumpScheduler(
            self.rib,
            config.archive_dir,
            self.clock,
            update_window=config.update_window,
            rib_interval=config.rib_interval,
            peer_info=self.peer_info,
            collector_bgp_id=ipaddress.IPv4Address(config.collector_bgp_id).packed,
        )
        self.mim = Mim(self.rib, archive_add=self.dumper.add)
        self.listener = Listener(
            config.feeders,
            config.bgp_bind,
            rib=self.rib,
            intake=self.mim.forward,
            clock=self.clock,
        )
        self.control = ControlServer(self.mim, config.control_bind)
        self.registry = self._load_registry(config.registry_file)
        self.engine = RuleEngine(state_dir=config.state_dir, clock=self.clock)
        self.flaps = FlapTracker(
            threshold=config.flap_threshold,
            window_us=config.flap_window_s * 1_000_000,
        )
        self.hijack_counters: dict[str, int] = {}
        # gateway streams tap classified events here (sync callbacks)
        self.flap_hooks: list = []
        self.hijack_hooks: list = []
        # one matrix per watched prefix, shared by every rule naming it —
        # otherwise each rule's private tracker would re-report the same
        # transition and matching rules would fire once per tracker
        self._watchers: dict[str, ReachabilityTracker] = {}
        self._watcher_rules: dict[str, set[str]] = {}
        self._peer_cache: dict[str, tuple[bytes, bytes, int]] = {}
        self._detectors = None
        self._tasks: list[asyncio.Task] = []
        self._started = False

        self.listener.up_hooks.append(self._on_session_up)
        self.listener.down_hooks.append(self._on_session_down)
        self.dumper.on_rib_dump.append(self._on_rib_dump)
        for rule in self.engine.rules():
            self._sync_watcher(rule)

    @staticmethod
    def _load_registry(path: str | None) -> OwnershipRegistry:
        if path and Path(path).exists():
            return OwnershipRegistry.load(path)
        return OwnershipRegistry()

    # -- lifecycle ----------------------------------------------------------

    async def start(self) -> None:
        for directory in (self.config.archive_dir, self.config.index_dir, self.config.state_dir):
            Path(directory).mkdir(parents=True, exist_ok=True)
        await self.listener.start()
        await self.control.start()
        self._detectors = self.mim.open_channel(DETECTOR_CHANNEL, capacity=8192)
        for filter_id, text in (("svc.detectors.v4", "0.0.0.0/0"), ("svc.detectors.v6", "::/0")):
            self.mim.configure_filter(FilterSpec(
                filter_id=filter_id,
                scope="*",
                prefix=Prefix.parse(text),
                modes=frozenset({"exact", "more_specifics"}),
                channel_id=DETECTOR_CHANNEL,
            ))
        self._tasks = [
            asyncio.create_task(self.dumper.run(), name="routelens-dumper"),
            asyncio.create_task(self._drain_detectors(), name="routelens-detectors"),
        ]
        self._started = True

    async def stop(self) -> None:
        self._started = False
        self.dumper.stop()
        for task in self._tasks:
            task.cancel()
        for task in self._tasks:
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
        self._tasks = []
        if self._detectors is not None:
            self.mim.close_channel(DETECTOR_CHANNEL)
            self._detectors = None
        await self.control.stop()
        await self.listener.stop()

    # -- session bookkeeping --------------------------------------------------

    def peer_info(self, feeder_id: str) -> tuple[bytes, bytes, int]:
        """Last known (bgp id, packed address, AS) — RIB dumps survive drops."""
        session = self.listener.active.get(feeder_id)
        if session is not None and session.state.peer_bgp_id is not None:
            self._cache_peer(feeder_id, session.state)
        cached = self._peer_cache.get(feeder_id)
        if cached is not None:
            return cached
        return b"\x00\x00\x00\x00", b"\x00\x00\x00\x00", 0

    def _cache_peer(self, feeder_id: str, state) -> None:
        try:
            packed = ipaddress.ip_address(state.peer_address).packed
        except ValueError:
            packed = b"\x00\x00\x00\x00"
        self._peer_cache[feeder_id] = (
            state.peer_bgp_id or b"\x00\x00\x00\x00",
            packed,
            state.peer_as or 0,
        )
        if state.peer_as is not None and state.peer_address is not None:
            self._peer_names[(state.peer_as, state.peer_address)] = feeder_id

    def _resolve_feeder(self, peer_as: int, peer_address: str) -> str:
        """Name archived routes by configured feeder id, not peer identity."""
        named = self._peer_names.get((peer_as, peer_address))
        if named is not None:
            return named
        matches = [c.feeder_id for c in self.config.feeders if c.expected_peer_as == peer_as]
        if len(matches) == 1:
            return matches[0]
        return default_feeder_resolver(peer_as, peer_address)

    def _on_session_up(self, feeder_id: str, timestamp: int) -> None:
        session = self.listener.active.get(feeder_id)
        if session is not None:
            self._cache_peer(feeder_id, session.state)

    def _on_session_down(self, feeder_id: str, timestamp: int) -> None:
        if self.config.purge_stale and self._started:
            asyncio.get_running_loop().create_task(self._purge_feeder(feeder_id, timestamp))

    # -- stale eviction -------------------------------------------------------

    def _on_rib_dump(self, ts: int) -> None:
        if not self._started:
            return
        loop = asyncio.get_running_loop()
        loop.create_task(self._purge_all_stale(ts * 1_000_000))
        if self.config.ingest_after_dump:
            loop.create_task(self._ingest_archive())

    async def _purge_all_stale(self, now_us: int) -> None:
        for feeder_id in self.rib.feeder_ids():
            await self._purge_feeder(feeder_id, now_us)

    async def _purge_feeder(self, feeder_id: str, now_us: int) -> None:
        feeder = self.rib.feeder(feeder_id)
        if feeder.snapshot(0).stale_since is None:
            return
        delta = feeder.purge_stale(now_us)
        if not delta:
            return
        for family in (Family.IPV4, Family.IPV6):
            doomed = tuple(p for p in delta.removed if p.family is family)
            if not doomed:
                continue
            part = RibDelta(feeder_id, now_us, removed=doomed, version=delta.version)
            for update in _withdraw_updates(family, doomed):
                self.mim.dispatch_synthetic(feeder_id, update, part, now_us)
        log.info("purged %d stale entries from %s", len(delta.removed), feeder_id)

    async def _ingest_archive(self) -> None:
        paths = sorted(p for p in Path(self.config.archive_dir).iterdir() if p.is_file())
        if paths:
            await asyncio.to_thread(self.store.ingest, paths)

    # -- detector loop ---------------------------------------------------------

    async def _drain_detectors(self) -> None:
        channel = self._detectors
        assert channel is not None
        while True:
            tagged = await channel.get()
            try:
                await self._classify(tagged)
            except asyncio.CancelledError:
                raise
            except Exception:
                log.exception("detector classification failed for %s", tagged.feeder_id)

    async def _classify(self, tagged) -> None:
        if not tagged.synthetic:
            for event in self.flaps.observe(tagged.feeder_id, tagged.update, tagged.received_at):
                for hook in self.flap_hooks:
                    hook(event)
                await self.engine.handle(event)
            for alert in classify_hijack(tagged, self.registry, self.hijack_counters):
                for hook in self.hijack_hooks:
                    hook(alert)
                await self.engine.handle(alert)
        touched = tagged.update.announced + tagged.update.withdrawn_all
        for tracker in list(self._watchers.values()):
            if tagged.feeder_id not in tracker.feeder_ids:
                continue
            # only exact-or-covering routes can move a longest-match answer
            if not any(p.covers(tracker.prefix) for p in touched):
                continue
            change = tracker.refresh(tagged.feeder_id, tagged.received_at)
            if change is not None:
                await self.engine.handle(change)

    # -- alert rule administration ---------------------------------------------

    def put_rule(self, rule: AlertRule) -> None:
        self.engine.put_rule(rule)
        self._sync_watcher(rule)

    def remove_rule(self, rule_id: str) -> bool:
        removed = self.engine.remove_rule(rule_id)
        self._unwatch(rule_id)
        return removed

    def _sync_watcher(self, rule: AlertRule) -> None:
        self._unwatch(rule.rule_id)
        if rule.trigger not in ("unreachable", "reachable-again"):
            return
        key = str(rule.subject)
        self._watcher_rules.setdefault(key, set()).add(rule.rule_id)
        if key not in self._watchers:
            self._watchers[key] = ReachabilityTracker(
                self.rib,
                rule.subject,
                feeder_ids=[c.feeder_id for c in self.config.feeders],
                now=self.clock.now_us(),
            )

    def _unwatch(self, rule_id: str) -> None:
        for key, ids in list(self._watcher_rules.items()):
            ids.discard(rule_id)
            if not ids:
                del self._watcher_rules[key]
                self._watchers.pop(key, None)

    # -- observability -----------------------------------------------------------

    def metrics(self) -> dict[str, int | float]:
        out: dict[str, int | float] = {}
        for name, value in self.mim.counters.items():
            out[f"fabric_{name}"] = value
        for name, value in self.dumper.counters.items():
            out[f"archive_{name}"] = value
        for name, value in sorted(self.hijack_counters.items()):
            out[f"hijack_{name}"] = value
        out["flap_tracked_states"] = self.flaps.tracked_count()
        out["alert_rules"] = len(self.engine.rules())
        for rule_id, count in sorted(self.engine.suppressed.items()):
            out[f"alerts_suppressed{{rule={rule_id}}}"] = count
        established = 0
        for state in self.listener.session_states():
            feeder = state["feeder_id"]
            if state["phase"] == "Established":
                established += 1
            out[f"session_messages_in{{feeder={feeder}}}"] = sum(
                state["counters"]["messages_in"].values()
            )
            out[f"session_parse_errors{{feeder={feeder}}}"] = state["counters"]["parse_errors"]
        out["sessions_established"] = established
        out["feeders_configured"] = len(self.config.feeders)
        for fid in self.rib.feeder_ids():
            out[f"rib_entries{{feeder={fid}}}"] = self.rib.feeder(fid).snapshot(0).count()
        return out


def _withdraw_updates(family: Family, prefixes: tuple[Prefix, ...]):
    """Yield withdraw-only UPDATEs, batched under the wire size cap."""
    batch = _WITHDRAW_BATCH[family]
    for i in range(0, len(prefixes), batch):
        chunk = prefixes[i : i + batch]
        if family is Family.IPV6:
            attrs = PathAttributes((Attribute.mp_unreach(Family.IPV6, chunk),))
            yield UpdateMessage(withdrawn=(), path_attributes=attrs, nlri=())
        else:
            yield UpdateMessage(withdrawn=chunk, path_attributes=PathAttributes(), nlri=())
