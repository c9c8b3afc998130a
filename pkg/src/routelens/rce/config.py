"""Feeder session configuration."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class FeederConfig:
    feeder_id: str
    local_as: int
    local_bgp_id: str = "192.0.2.1"
    expected_peer_as: int | None = None
    hold_time_proposal: int = 90
    allowed_source_addresses: tuple[str, ...] | None = None

    @property
    def local_bgp_id_packed(self) -> bytes:
        return ipaddress.IPv4Address(self.local_bgp_id).packed

    def allows_source(self, address: str) -> bool | None:
        """True/False against the allow-list; None when no list is configured."""
        if self.allowed_source_addresses is None:
            return None
        return address in self.allowed_source_addresses

    @staticmethod
    def from_dict(raw: dict) -> "FeederConfig":
        allowed = raw.get("allowed_source_addresses")
        return FeederConfig(
            feeder_id=raw["feeder_id"],
            local_as=int(raw.get("local_as", 64512)),
            local_bgp_id=raw.get("local_bgp_id", "192.0.2.1"),
            expected_peer_as=(int(raw["expected_peer_as"]) if raw.get("expected_peer_as") is not None else None),
            hold_time_proposal=int(raw.get("hold_time_proposal", 90)),
            allowed_source_addresses=tuple(allowed) if allowed is not None else None,
        )
