"""Live, historic, and alerting services over the collector core."""

from .alerts import (
    AlertRule,
    Notification,
    RuleEngine,
    SinkDelivery,
    SinkUnreachable,
    event_facts,
)
from .flap import (
    CLASSES,
    FlapEvent,
    FlapState,
    FlapTracker,
    attributes_digest,
    classify_transition,
)
from .flow import (
    RollingRates,
    UnknownFeeder,
    delta_rows,
    entry_row,
    portion_match,
    rtv_table,
    update_summary,
)
from .hijack import (
    HIJACK_CLASSES,
    EmptyAsPath,
    HijackAlert,
    OwnershipRegistry,
    classify_announcement,
    classify_hijack,
)
from .historic import event_row, historic_rtv, historic_sr
from .reach import (
    ReachabilityChange,
    ReachabilityRow,
    ReachabilityTracker,
    best_covering,
    subnet_reachability,
)

__all__ = [
    "AlertRule",
    "CLASSES",
    "EmptyAsPath",
    "FlapEvent",
    "FlapState",
    "FlapTracker",
    "HIJACK_CLASSES",
    "HijackAlert",
    "Notification",
    "OwnershipRegistry",
    "ReachabilityChange",
    "ReachabilityRow",
    "ReachabilityTracker",
    "RollingRates",
    "RuleEngine",
    "SinkDelivery",
    "SinkUnreachable",
    "UnknownFeeder",
    "attributes_digest",
    "best_covering",
    "classify_announcement",
    "classify_hijack",
    "classify_transition",
    "delta_rows",
    "entry_row",
    "event_facts",
    "event_row",
    "historic_rtv",
    "historic_sr",
    "portion_match",
    "rtv_table",
    "subnet_reachability",
    "update_summary",
]
