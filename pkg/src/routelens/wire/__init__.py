from .prefix import Family, Prefix, PrefixError, canonicalize_prefix
from .messages import (
    Attribute,
    BgpDecodeError,
    BgpMessage,
    KeepaliveMessage,
    NotificationMessage,
    OpenMessage,
    UpdateMessage,
    decode_message,
    encode_message,
    iter_messages,
)

__all__ = [
    "Family",
    "Prefix",
    "PrefixError",
    "canonicalize_prefix",
    "Attribute",
    "BgpDecodeError",
    "BgpMessage",
    "KeepaliveMessage",
    "NotificationMessage",
    "OpenMessage",
    "UpdateMessage",
    "decode_message",
    "encode_message",
    "iter_messages",
]
