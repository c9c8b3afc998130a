from .filters import (
    Channel,
    ChannelBackpressure,
    DuplicateFilterId,
    FilterIndex,
    FilterSpec,
    Mim,
    TaggedUpdate,
    UnknownChannel,
    UnknownFilter,
)
from .control import ControlServer

__all__ = [
    "Channel",
    "ChannelBackpressure",
    "DuplicateFilterId",
    "FilterIndex",
    "FilterSpec",
    "Mim",
    "TaggedUpdate",
    "UnknownChannel",
    "UnknownFilter",
    "ControlServer",
]
