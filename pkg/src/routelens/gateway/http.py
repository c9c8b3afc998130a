"""HTTP + websocket surface over one Collector.

Everything here is a thin adapter: parse/authenticate, call the service
layer, render JSON.  Errors map to the usual codes — 400 bad parameters,
401 bad token, 404 unknown resource or uncovered instant, 503 archive
trouble — with a machine-readable ``{"error": ...}`` body.
"""

from __future__ import annotations

import json
import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Query, Request, WebSocket
from fastapi.responses import PlainTextResponse
from starlette.websockets import WebSocketDisconnect

from ..hdsrs.store import BucketAbsent, CorruptArchive, InstantNotCovered, StoreError
from ..services.alerts import AlertRule
from ..services.historic import event_row, historic_sr
from ..system import Collector
from ..wire.prefix import Prefix
from .schemas import AckRequest, RuleDoc, parse_instant
from .sessions import (
    GatewayError,
    SessionManager,
    serve_stream,
)

log = logging.getLogger(__name__)


class TokenStore:
    """Bearer tokens from a JSON file: ``{token: {user, feeders}}``.

    The file is re-read when its mtime moves, so grants can be rotated
    without a restart.  With no file configured the gateway is open and
    every caller is ``anonymous`` with access to all feeders.
    """

    def __init__(self, path: str | None) -> None:
        self.path = Path(path) if path else None
        self._mtime: float | None = None
        self._tokens: dict = {}

    def resolve(self, token: str | None) -> dict | None:
        if self.path is None:
            return {"user": "anonymous", "feeders": ["*"]}
        self._refresh()
        doc = self._tokens.get(token or "")
        if doc is None:
            return None
        return {"user": doc.get("user", "unknown"), "feeders": list(doc.get("feeders", []))}

    def _refresh(self) -> None:
        try:
            mtime = self.path.stat().st_mtime
        except OSError:
            self._tokens = {}
            self._mtime = None
            return
        if mtime != self._mtime:
            self._tokens = json.loads(self.path.read_text())
            self._mtime = mtime


def _bearer(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[7:].strip()
    return request.query_params.get("token")


def create_app(
    collector: Collector,
    manager: SessionManager | None = None,
    *,
    token_file: str | None = None,
) -> FastAPI:
    manager = manager or SessionManager(collector)
    tokens = TokenStore(token_file if token_file is not None else collector.config.token_file)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        await manager.aclose()

    app = FastAPI(title="routelens gateway", lifespan=lifespan)
    app.state.collector = collector
    app.state.manager = manager

    def grants_of(request: Request) -> dict:
        grants = tokens.resolve(_bearer(request))
        if grants is None:
            raise HTTPException(status_code=401, detail="invalid or missing token")
        return grants

    def parse_prefix(text: str) -> Prefix:
        try:
            return Prefix.parse(text)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"bad prefix {text!r}: {exc}")

    def parse_mode(mode: str) -> str:
        if mode not in ("exact", "more_specifics", "less_specifics", "all"):
            raise HTTPException(status_code=400, detail=f"bad mode {mode!r}")
        return mode

    def parse_when(value: str, name: str) -> int:
        try:
            return parse_instant(value)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"bad {name}: {exc}")

    @app.exception_handler(GatewayError)
    async def _gateway_error(_: Request, exc: GatewayError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=exc.http_status, content={"error": str(exc)})

    @app.exception_handler(StoreError)
    async def _store_error(_: Request, exc: StoreError):
        from fastapi.responses import JSONResponse

        status = 404 if isinstance(exc, (InstantNotCovered, BucketAbsent)) else 503
        if isinstance(exc, CorruptArchive):
            status = 503
        return JSONResponse(status_code=status, content={"error": str(exc)})

    # -- live state --------------------------------------------------------

    @app.get("/feeders")
    def feeders(grants: dict = Depends(grants_of)) -> dict:
        return {"feeders": collector.listener.session_states()}

    @app.get("/metrics", response_class=PlainTextResponse)
    def metrics(grants: dict = Depends(grants_of)) -> str:
        lines = [f"{name} {value}" for name, value in sorted(collector.metrics().items())]
        return "\n".join(lines) + "\n"

    # -- historic queries -----------------------------------------------------

    @app.get("/historic/events")
    def historic_events(
        prefix: str,
        mode: str = "exact",
        from_: str = Query(alias="from"),
        to: str = Query(),
        feeder: str | None = None,
        grants: dict = Depends(grants_of),
    ) -> dict:
        portion = parse_prefix(prefix)
        start = parse_when(from_, "from")
        end = parse_when(to, "to")
        if end <= start:
            raise HTTPException(status_code=400, detail="to must be after from")
        events = collector.store.query_events(portion, parse_mode(mode), start, end)
        if feeder is not None:
            events = [e for e in events if e.feeder_id == feeder]
        return {
            "prefix": prefix,
            "mode": mode,
            "from": start,
            "to": end,
            "events": [event_row(e) for e in events],
        }

    @app.get("/historic/rib")
    def historic_rib(
        prefix: str,
        at: str,
        mode: str = "exact",
        feeders: str | None = None,
        grants: dict = Depends(grants_of),
    ) -> dict:
        portion = parse_prefix(prefix)
        at_us = parse_when(at, "at")
        wanted = feeders.split(",") if feeders else None
        entries = collector.store.reconstruct_rib(portion, parse_mode(mode), at_us, feeders=wanted)
        return {
            "prefix": prefix,
            "mode": mode,
            "at": at_us,
            "table": [
                {
                    "feeder": e.feeder_id,
                    "prefix": str(e.prefix),
                    "attributes": e.attributes,
                    "received_at": e.received_at,
                }
                for e in entries
            ],
        }

    @app.get("/reachability/timeline")
    def reachability_timeline(
        prefix: str,
        from_: str = Query(alias="from"),
        to: str = Query(),
        feeders: str | None = None,
        include_default: bool = True,
        grants: dict = Depends(grants_of),
    ) -> dict:
        subject = parse_prefix(prefix)
        start = parse_when(from_, "from")
        end = parse_when(to, "to")
        if end <= start:
            raise HTTPException(status_code=400, detail="to must be after from")
        wanted = feeders.split(",") if feeders else None
        intervals = historic_sr(
            collector.store, subject, start, end,
            feeders=wanted, include_default=include_default,
        )
        return {
            "prefix": prefix,
            "from": start,
            "to": end,
            "include_default": include_default,
            "intervals": {f: [[a, b] for a, b in spans] for f, spans in intervals.items()},
        }

    # -- alert administration ----------------------------------------------------

    @app.get("/alerts/rules")
    async def list_rules(grants: dict = Depends(grants_of)) -> dict:
        user = grants["user"]
        return {"rules": [r.to_dict() for r in collector.engine.rules() if r.owner == user]}

    @app.put("/alerts/rules")
    async def put_rule(doc: RuleDoc, grants: dict = Depends(grants_of)) -> dict:
        raw = doc.model_dump()
        raw["owner"] = grants["user"]
        try:
            rule = AlertRule.from_dict(raw)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        collector.put_rule(rule)
        return rule.to_dict()

    @app.delete("/alerts/rules/{rule_id}")
    async def delete_rule(rule_id: str, grants: dict = Depends(grants_of)) -> dict:
        rule = collector.engine.get_rule(rule_id)
        if rule is None or rule.owner != grants["user"]:
            raise HTTPException(status_code=404, detail=f"no rule {rule_id!r}")
        collector.remove_rule(rule_id)
        return {"removed": rule_id}

    @app.get("/alerts/inbox")
    async def inbox(
        include_acknowledged: bool = False,
        grants: dict = Depends(grants_of),
    ) -> dict:
        items = collector.engine.inbox(
            owner=grants["user"], include_acknowledged=include_acknowledged
        )
        return {"notifications": [n.to_dict() for n in items]}

    @app.post("/alerts/inbox/ack")
    async def ack(body: AckRequest, grants: dict = Depends(grants_of)) -> dict:
        mine = collector.engine.inbox(owner=grants["user"], include_acknowledged=True)
        if not any(n.notification_id == body.notification_id for n in mine):
            raise HTTPException(status_code=404, detail=f"no notification {body.notification_id!r}")
        collector.engine.ack(body.notification_id)
        return {"acknowledged": body.notification_id}

    # -- the stream ---------------------------------------------------------------

    @app.websocket("/ws")
    async def ws(websocket: WebSocket) -> None:
        token = websocket.query_params.get("token")
        if token is None:
            header = websocket.headers.get("authorization", "")
            if header.lower().startswith("bearer "):
                token = header[7:].strip()
        grants = tokens.resolve(token)
        await websocket.accept()
        if grants is None:
            await websocket.send_json(
                {"type": "control", "op": "error", "message": "invalid or missing token"}
            )
            await websocket.close(code=4401)
            return
        try:
            await serve_stream(
                manager, grants["user"], grants,
                websocket.receive_json, websocket.send_json,
            )
        except WebSocketDisconnect:
            pass

    return app
