"""Scripted BGP feeder simulator."""

from .runner import SessionLostUnexpectedly, TargetRefused, Transcript, run
from .scenario import (
    FeederSpec,
    Scenario,
    TimelineAction,
    attrs_from_spec,
    build_announce,
    build_withdraw,
    generate_table,
)

__all__ = [
    "FeederSpec",
    "Scenario",
    "SessionLostUnexpectedly",
    "TargetRefused",
    "TimelineAction",
    "Transcript",
    "attrs_from_spec",
    "build_announce",
    "build_withdraw",
    "generate_table",
    "run",
]
