from .rib import FeederRib, FeederSnapshot, Rib, RibDelta, RibEntry, apply_update
from .config import FeederConfig
from .session import (
    CollisionDetected,
    HoldTimerExpired,
    OpenRejected,
    SessionEvent,
    SessionState,
    run_listener,
)
from .dumper import DumpScheduler, run_dump_scheduler

__all__ = [
    "FeederRib",
    "FeederSnapshot",
    "Rib",
    "RibDelta",
    "RibEntry",
    "apply_update",
    "FeederConfig",
    "CollisionDetected",
    "HoldTimerExpired",
    "OpenRejected",
    "SessionEvent",
    "SessionState",
    "run_listener",
    "DumpScheduler",
    "run_dump_scheduler",
]
