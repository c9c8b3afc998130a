"""Filter-configuration control socket.

A local TCP endpoint speaking length-prefixed JSON: each frame is a 4-octet
big-endian length followed by one UTF-8 JSON object.  Commands::

    {"op": "open_channel", "channel": "ch1", "capacity": 1024}
    {"op": "install", "filter_id": "f1", "scope": "*" | "<feeder>",
     "prefix": "10.20.0.0/16", "modes": ["exact", "more_specifics"],
     "channel": "ch1"}
    {"op": "remove", "filter_id": "f1"}
    {"op": "list"}

Every command gets one reply frame ``{"ok": true, ...}`` or
``{"ok": false, "error": "<kind>", "detail": "..."}``.  Matched updates for
channels opened on a connection stream back on that same connection as
``{"event": "update", "channel": ..., ...}`` frames; closing the
connection closes its channels and removes their filters.
"""

from __future__ import annotations

import asyncio
import json
import struct

from ..wire.prefix import Prefix, PrefixError
from .filters import (
    Channel,
    DuplicateFilterId,
    FilterSpec,
    Mim,
    TaggedUpdate,
    UnknownChannel,
    UnknownFilter,
)

_LEN = struct.Struct("!I")
MAX_FRAME = 1 << 20


async def read_frame(reader: asyncio.StreamReader) -> dict | None:
    try:
        header = await reader.readexactly(_LEN.size)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise ValueError(f"control frame of {length} octets exceeds limit")
    try:
        body = await reader.readexactly(length)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    return json.loads(body.decode("utf-8"))


def write_frame(writer: asyncio.StreamWriter, obj: dict) -> None:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    writer.write(_LEN.pack(len(body)) + body)


def _update_frame(channel_id: str, tagged: TaggedUpdate) -> dict:
    return {
        "event": "update",
        "channel": channel_id,
        "feeder_id": tagged.feeder_id,
        "received_at": tagged.received_at,
        "matched_filter_ids": list(tagged.matched_filter_ids),
        "announced": [str(p) for p in tagged.update.announced],
        "withdrawn": [str(p) for p in tagged.update.withdrawn_all],
    }


class ControlServer:
    def __init__(self, mim: Mim, bind: tuple[str, int]) -> None:
        self.mim = mim
        self.bind = bind
        self._server: asyncio.AbstractServer | None = None
        self._conn_seq = 0

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connect, self.bind[0], self.bind[1])

    @property
    def bound_address(self) -> tuple[str, int]:
        assert self._server is not None and self._server.sockets
        name = self._server.sockets[0].getsockname()
        return name[0], name[1]

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _on_connect(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._conn_seq += 1
        owned_channels: dict[str, Channel] = {}
        owned_filters: set[str] = set()
        pumps: list[asyncio.Task] = []
        lock = asyncio.Lock()  # serialize reply/event frames on the socket

        async def send(obj: dict) -> None:
            async with lock:
                write_frame(writer, obj)
                try:
                    await writer.drain()
                except (ConnectionError, RuntimeError):
                    pass

        async def pump(channel: Channel) -> None:
            while not channel.closed:
                tagged = await channel.get()
                dropped = channel.take_drop_report()
                if dropped:
                    await send({"event": "drops", "channel": channel.channel_id, "count": dropped})
                await send(_update_frame(channel.channel_id, tagged))

        try:
            while True:
                try:
                    cmd = await read_frame(reader)
                except (ValueError, json.JSONDecodeError) as exc:
                    await send({"ok": False, "error": "BadFrame", "detail": str(exc)})
                    break
                if cmd is None:
                    break
                reply = self._dispatch(cmd, owned_channels, owned_filters)
                if reply.pop("_new_channel", None):
                    channel = owned_channels[cmd["channel"]]
                    pumps.append(asyncio.ensure_future(pump(channel)))
                await send(reply)
        finally:
            for task in pumps:
                task.cancel()
            for channel_id in list(owned_channels):
                self.mim.close_channel(channel_id)
            for filter_id in owned_filters:
                try:
                    self.mim.remove_filter(filter_id)
                except UnknownFilter:
                    pass
            writer.close()

    def _dispatch(self, cmd: dict, owned_channels: dict[str, Channel], owned_filters: set[str]) -> dict:
        op = cmd.get("op")
        try:
            if op == "open_channel":
                channel_id = str(cmd["channel"])
                channel = self.mim.open_channel(channel_id, int(cmd.get("capacity", 1024)))
                owned_channels[channel_id] = channel
                return {"ok": True, "channel": channel_id, "_new_channel": True}
            if op == "install":
                spec = FilterSpec(
                    filter_id=str(cmd["filter_id"]),
                    scope=str(cmd.get("scope", "*")),
                    prefix=Prefix.parse(cmd["prefix"]),
                    modes=frozenset(cmd["modes"]),
                    channel_id=str(cmd["channel"]),
                )
                self.mim.configure_filter(spec)
                owned_filters.add(spec.filter_id)
                return {"ok": True, "filter_id": spec.filter_id}
            if op == "remove":
                removed = self.mim.remove_filter(str(cmd["filter_id"]))
                owned_filters.discard(removed.filter_id)
                return {"ok": True, "filter_id": removed.filter_id}
            if op == "list":
                return {
                    "ok": True,
                    "filters": [
                        {
                            "filter_id": s.filter_id,
                            "scope": s.scope,
                            "prefix": str(s.prefix),
                            "modes": sorted(s.modes),
                            "channel": s.channel_id,
                        }
                        for s in self.mim.index.specs()
                    ],
                }
            return {"ok": False, "error": "UnknownOp", "detail": str(op)}
        except DuplicateFilterId as exc:
            return {"ok": False, "error": "DuplicateFilterId", "detail": str(exc)}
        except UnknownChannel as exc:
            return {"ok": False, "error": "UnknownChannel", "detail": str(exc)}
        except UnknownFilter as exc:
            return {"ok": False, "error": "UnknownFilter", "detail": str(exc)}
        except (KeyError, ValueError, PrefixError) as exc:
            return {"ok": False, "error": "InvalidParameters", "detail": repr(exc)}
