"""Command-line entry points.

Thin wrappers only: every command parses arguments, calls the library,
prints, and exits nonzero on failure.  ``--json`` switches the human
output to machine-readable lines.
"""

from __future__ import annotations

import asyncio
import io
import json
import sys
from pathlib import Path

import click

from .feedsim.runner import SessionLostUnexpectedly, TargetRefused
from .feedsim.scenario import Scenario
from .hdsrs.store import Store, StoreError, attrs_to_json
from .mrt.codec import (
    BGP4MP_MESSAGE,
    BGP4MP_MESSAGE_AS4,
    MRT_BGP4MP,
    MRT_BGP4MP_ET,
    MRT_TABLE_DUMP_V2,
    TD2_PEER_INDEX,
    TD2_RIB_V4,
    TD2_RIB_V6,
    MrtError,
    extract_bgp_octets,
    parse_peer_index_table,
    parse_rib_record,
    read_records,
)
from .wire.messages import UpdateMessage, decode_message, encode_message
from .wire.prefix import Prefix


@click.group()
def main() -> None:
    """BGP route collection, archival, and live analysis."""


# ---------------------------------------------------------------------------
# collector


@main.group()
def collector() -> None:
    """Run and inspect the collector process."""


@collector.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON config file; see README for the schema.")
def collector_run(config_path: str) -> None:
    """Start the collector and its HTTP/websocket gateway."""
    import uvicorn

    from .gateway.http import create_app
    from .system import Collector, CollectorConfig

    config = CollectorConfig.from_file(config_path)

    async def serve() -> None:
        engine = Collector(config)
        await engine.start()
        bgp_host, bgp_port = engine.listener.bound_address
        click.echo(f"feeder sessions on {bgp_host}:{bgp_port}", err=True)
        app = create_app(engine)
        server = uvicorn.Server(uvicorn.Config(
            app, host=config.http_bind[0], port=config.http_bind[1], log_level="info",
        ))
        try:
            await server.serve()
        finally:
            await engine.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass


# ---------------------------------------------------------------------------
# historic store


def _parse_instant_arg(value: str, name: str) -> int:
    from .gateway.schemas import parse_instant

    try:
        return parse_instant(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint=name)


@main.group()
def hdsrs() -> None:
    """Offline work against the prefix/time index."""


@hdsrs.command("ingest")
@click.option("--index", "index_dir", required=True, type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="machine-readable report")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
def hdsrs_ingest(index_dir: str, as_json: bool, paths: tuple[str, ...]) -> None:
    """Index MRT archive files for historic queries."""
    store = Store(index_dir)
    report = store.ingest(paths)
    if as_json:
        click.echo(json.dumps(report.to_dict()))
    else:
        for row in report.files:
            detail = f" ({row['detail']})" if "detail" in row else ""
            click.echo(f"{row['path']}: {row['status']}{detail}")
        click.echo(
            f"indexed {report.events_indexed} events across {report.buckets_touched} buckets, "
            f"{report.duplicates_skipped} duplicates skipped"
        )
        for warning in report.warnings:
            click.echo(f"warning: {warning}", err=True)
    failed = [r for r in report.files if r["status"] in ("corrupt", "unreadable")]
    if failed:
        sys.exit(1)


@hdsrs.command("query")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--prefix", required=True)
@click.option("--mode", default="exact",
              type=click.Choice(["exact", "more_specifics", "less_specifics", "all"]))
@click.option("--from", "start", required=True, help="start instant (µs or RFC 3339)")
@click.option("--to", "end", required=True, help="end instant, exclusive")
@click.option("--feeder", default=None)
@click.option("--json", "as_json", is_flag=True)
def hdsrs_query(index_dir: str, prefix: str, mode: str, start: str, end: str,
                feeder: str | None, as_json: bool) -> None:
    """Announce/withdraw events for a prefix portion inside a time range."""
    from .services.historic import event_row

    try:
        portion = Prefix.parse(prefix)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--prefix")
    start_us = _parse_instant_arg(start, "--from")
    end_us = _parse_instant_arg(end, "--to")
    store = Store(index_dir)
    try:
        events = store.query_events(portion, mode, start_us, end_us)
    except StoreError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if feeder is not None:
        events = [e for e in events if e.feeder_id == feeder]
    for event in events:
        row = event_row(event)
        if as_json:
            click.echo(json.dumps(row))
        else:
            click.echo(f"{row['at']} {row['feeder']} {row['op']} {row['prefix']}")


@hdsrs.command("rib")
@click.option("--index", "index_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--prefix", required=True)
@click.option("--mode", default="exact",
              type=click.Choice(["exact", "more_specifics", "less_specifics", "all"]))
@click.option("--at", required=True, help="instant (µs or RFC 3339)")
@click.option("--feeders", default=None, help="comma-separated feeder ids")
@click.option("--json", "as_json", is_flag=True)
def hdsrs_rib(index_dir: str, prefix: str, mode: str, at: str,
              feeders: str | None, as_json: bool) -> None:
    """Reconstruct related table state at one instant."""
    try:
        portion = Prefix.parse(prefix)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--prefix")
    at_us = _parse_instant_arg(at, "--at")
    store = Store(index_dir)
    try:
        entries = store.reconstruct_rib(
            portion, mode, at_us,
            feeders=feeders.split(",") if feeders else None,
        )
    except StoreError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    for entry in entries:
        if as_json:
            click.echo(json.dumps({
                "feeder": entry.feeder_id,
                "prefix": str(entry.prefix),
                "attributes": entry.attributes,
                "received_at": entry.received_at,
            }))
        else:
            path = entry.attributes.get("as_path", [])
            click.echo(f"{entry.feeder_id} {entry.prefix} as_path={path} at={entry.received_at}")


# ---------------------------------------------------------------------------
# replay


@main.command("replay")
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--target", required=True, help="collector address, host:port")
@click.option("--transcript", "transcript_path", default=None,
              type=click.Path(dir_okay=False), help="write sent messages as JSONL")
@click.option("--json", "as_json", is_flag=True)
def replay(scenario_path: str, target: str, transcript_path: str | None, as_json: bool) -> None:
    """Feed a scripted scenario into a live collector."""
    from .feedsim.runner import run

    scenario = Scenario.load(scenario_path)
    host, _, port_text = target.rpartition(":")
    if not host or not port_text.isdigit():
        raise click.BadParameter("target must be host:port", param_hint="--target")
    try:
        transcript = asyncio.run(run(scenario, (host, int(port_text))))
    except TargetRefused as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except SessionLostUnexpectedly as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(4)
    if transcript_path:
        transcript.write_jsonl(transcript_path)
    kinds: dict[str, int] = {}
    for entry in transcript.entries:
        kinds[entry["kind"]] = kinds.get(entry["kind"], 0) + 1
    summary = {"sent": len(transcript.entries), "by_kind": kinds}
    if as_json:
        click.echo(json.dumps(summary))
    else:
        parts = ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))
        click.echo(f"sent {len(transcript.entries)} messages ({parts})")


# ---------------------------------------------------------------------------
# MRT archive tools


@main.group()
def mrt() -> None:
    """Inspect and verify MRT archive files."""


def _describe_update(octets: bytes, meta: dict) -> dict:
    message, _ = decode_message(octets, as4=meta["as4"])
    row: dict = {
        "at": meta["timestamp"] * 1_000_000 + meta["microseconds"],
        "peer_as": meta["peer_as"],
        "kind": type(message).__name__.removesuffix("Message").lower(),
    }
    if isinstance(message, UpdateMessage):
        row["announced"] = [str(p) for p in message.announced]
        row["withdrawn"] = [str(p) for p in message.withdrawn_all]
        if message.announced:
            row["attributes"] = attrs_to_json(message.path_attributes)
    return row


@mrt.command("cat")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.option("--limit", default=0, help="stop after N records (0 = all)")
def mrt_cat(paths: tuple[str, ...], as_json: bool, limit: int) -> None:
    """Print archive records in reading order."""
    printed = 0
    for path in paths:
        peers: list = []
        try:
            with open(path, "rb") as fh:
                for record in read_records(fh):
                    rows = _cat_rows(record, peers)
                    for row in rows:
                        row["file"] = path
                        if as_json:
                            click.echo(json.dumps(row))
                        else:
                            click.echo(_cat_line(row))
                        printed += 1
                        if limit and printed >= limit:
                            return
        except (MrtError, OSError) as exc:
            click.echo(f"error: {path}: {exc}", err=True)
            sys.exit(1)


def _cat_rows(record, peers: list) -> list[dict]:
    if record.type_code in (MRT_BGP4MP, MRT_BGP4MP_ET):
        if record.subtype in (BGP4MP_MESSAGE, BGP4MP_MESSAGE_AS4):
            octets, meta = extract_bgp_octets(record)
            return [_describe_update(octets, meta)]
        return [{"at": record.timestamp_us, "kind": "state_change"}]
    if record.type_code == MRT_TABLE_DUMP_V2:
        if record.subtype == TD2_PEER_INDEX:
            _, _, entries = parse_peer_index_table(record)
            peers.clear()
            peers.extend(entries)
            return [{"at": record.timestamp_us, "kind": "peer_index", "peers": len(entries)}]
        if record.subtype in (TD2_RIB_V4, TD2_RIB_V6):
            _seq, prefix, routes = parse_rib_record(record, peers)
            return [{
                "at": record.timestamp_us,
                "kind": "rib",
                "prefix": str(prefix),
                "routes": [
                    {"peer_as": peer.peer_as, "attributes": attrs_to_json(attrs)}
                    for peer, _orig, attrs in routes
                ],
            }]
    return [{"at": record.timestamp_us, "kind": f"type{record.type_code}.{record.subtype}"}]


def _cat_line(row: dict) -> str:
    at = row.get("at", 0)
    kind = row["kind"]
    if kind == "update":
        ann = ",".join(row.get("announced", [])) or "-"
        wdr = ",".join(row.get("withdrawn", [])) or "-"
        return f"{at} update peer_as={row['peer_as']} announce={ann} withdraw={wdr}"
    if kind == "rib":
        return f"{at} rib {row['prefix']} routes={len(row['routes'])}"
    if kind == "peer_index":
        return f"{at} peer_index peers={row['peers']}"
    return f"{at} {kind}"


@mrt.command("verify")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def mrt_verify(paths: tuple[str, ...], as_json: bool) -> None:
    """Re-encode every record and embedded BGP message; fail on any drift."""
    bad = False
    for path in paths:
        report = _verify_file(Path(path))
        bad = bad or report["mismatches"] or report["errors"]
        if as_json:
            click.echo(json.dumps(report))
        else:
            status = "OK" if not (report["mismatches"] or report["errors"]) else "FAIL"
            click.echo(
                f"{path}: {status} records={report['records']} "
                f"bgp_messages={report['bgp_messages']} "
                f"mismatches={report['mismatches']} errors={report['errors']}"
            )
    if bad:
        sys.exit(1)


def _verify_file(path: Path) -> dict:
    blob = path.read_bytes()
    report = {"path": str(path), "records": 0, "bgp_messages": 0, "mismatches": 0, "errors": 0}
    pos = 0
    peers: list = []
    try:
        for record in read_records(io.BytesIO(blob)):
            report["records"] += 1
            encoded = record.encode()
            if blob[pos : pos + len(encoded)] != encoded:
                report["mismatches"] += 1
            pos += len(encoded)
            if record.type_code in (MRT_BGP4MP, MRT_BGP4MP_ET) and record.subtype in (
                BGP4MP_MESSAGE, BGP4MP_MESSAGE_AS4,
            ):
                octets, meta = extract_bgp_octets(record)
                report["bgp_messages"] += 1
                message, consumed = decode_message(octets, as4=meta["as4"])
                if consumed != len(octets) or encode_message(message) != octets:
                    report["mismatches"] += 1
            elif record.type_code == MRT_TABLE_DUMP_V2:
                if record.subtype == TD2_PEER_INDEX:
                    peers = parse_peer_index_table(record)[2]
                elif record.subtype in (TD2_RIB_V4, TD2_RIB_V6):
                    parse_rib_record(record, peers)
    except MrtError:
        report["errors"] += 1
    if pos != len(blob):
        report["errors"] += 1
    return report


if __name__ == "__main__":
    main()
