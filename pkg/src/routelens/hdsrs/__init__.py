from .store import (
    BucketAbsent,
    BucketHandle,
    BucketKey,
    CorruptArchive,
    HistoricEntry,
    IndexedEvent,
    IngestReport,
    InstantNotCovered,
    Store,
    attrs_to_json,
)

__all__ = [
    "BucketAbsent",
    "BucketHandle",
    "BucketKey",
    "CorruptArchive",
    "HistoricEntry",
    "IndexedEvent",
    "IngestReport",
    "InstantNotCovered",
    "Store",
    "attrs_to_json",
]
