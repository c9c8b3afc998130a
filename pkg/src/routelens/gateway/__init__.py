"""Streaming gateway: websocket session fabric plus the REST surface."""

from .http import TokenStore, create_app
from .schemas import (
    EVENT_KINDS,
    SESSION_KINDS,
    flap_payload,
    hijack_payload,
    notification_payload,
    parse_instant,
    reach_change_payload,
    reach_row_payload,
)
from .sessions import (
    HEARTBEAT_S,
    MISSED_HEARTBEATS,
    GatewayError,
    InvalidParameters,
    NotFound,
    ServiceUnavailable,
    Session,
    SessionManager,
    Unauthorized,
    UnknownSession,
    feeder_granted,
    serve_stream,
)

__all__ = [
    "EVENT_KINDS",
    "HEARTBEAT_S",
    "MISSED_HEARTBEATS",
    "SESSION_KINDS",
    "GatewayError",
    "InvalidParameters",
    "NotFound",
    "ServiceUnavailable",
    "Session",
    "SessionManager",
    "TokenStore",
    "Unauthorized",
    "UnknownSession",
    "create_app",
    "feeder_granted",
    "flap_payload",
    "hijack_payload",
    "notification_payload",
    "parse_instant",
    "reach_change_payload",
    "reach_row_payload",
    "serve_stream",
]
