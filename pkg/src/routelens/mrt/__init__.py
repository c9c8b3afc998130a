from .codec import (
    MrtRecord,
    PeerIndexEntry,
    RibSnapshotEntry,
    MrtError,
    TruncatedRecord,
    LengthMismatch,
    WrongRecordType,
    DanglingPeerIndex,
    read_records,
    read_file,
    write_update_dump,
    write_state_change,
    write_rib_snapshot,
    extract_bgp_octets,
    parse_peer_index_table,
    parse_rib_record,
    rib_file_name,
    update_file_name,
    MRT_BGP4MP,
    MRT_BGP4MP_ET,
    MRT_TABLE_DUMP_V2,
    TD2_PEER_INDEX,
    TD2_RIB_V4,
    TD2_RIB_V6,
    BGP4MP_MESSAGE,
    BGP4MP_MESSAGE_AS4,
    BGP4MP_STATE_CHANGE_AS4,
)

__all__ = [
    "MrtRecord",
    "PeerIndexEntry",
    "RibSnapshotEntry",
    "MrtError",
    "TruncatedRecord",
    "LengthMismatch",
    "WrongRecordType",
    "DanglingPeerIndex",
    "read_records",
    "read_file",
    "write_update_dump",
    "write_state_change",
    "write_rib_snapshot",
    "extract_bgp_octets",
    "parse_peer_index_table",
    "parse_rib_record",
    "rib_file_name",
    "update_file_name",
    "MRT_BGP4MP",
    "MRT_BGP4MP_ET",
    "MRT_TABLE_DUMP_V2",
    "TD2_PEER_INDEX",
    "TD2_RIB_V4",
    "TD2_RIB_V6",
    "BGP4MP_MESSAGE",
    "BGP4MP_MESSAGE_AS4",
    "BGP4MP_STATE_CHANGE_AS4",
]
