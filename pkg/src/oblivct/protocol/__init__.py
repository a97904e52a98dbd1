"""Two-server query protocol: nine stages, pipelined groups, batching."""

from .params import SystemParams
from .messages import BatchConfig, QueryEnvelope, Reject, ShareResponse
from .wire import (
    Frame,
    FramedChannel,
    MsgType,
    WireError,
    channel_pair,
)
from .client import LookupClient, VerifiedLookup, LookupError
from .server import DataServer, IndexServer, StageEvent

__all__ = [
    "SystemParams",
    "BatchConfig",
    "QueryEnvelope",
    "Reject",
    "ShareResponse",
    "Frame",
    "FramedChannel",
    "MsgType",
    "WireError",
    "channel_pair",
    "LookupClient",
    "VerifiedLookup",
    "LookupError",
    "DataServer",
    "IndexServer",
    "StageEvent",
]
