"""Client-facing message bodies and batching configuration."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .wire import WireError

QUERY_ID_LEN = 16
COMMITMENT_LEN = 32
INDEX_SHARE_LEN = 2  # 16-bit leaf-index share


@dataclass(frozen=True)
class QueryEnvelope:
    """One server's half of a query.

    The pair of envelopes for one query XOR-combines to the true leaf
    index; a single envelope is independent of the queried domain. The
    commitment is the cross-server join key for interleaved arrivals.
    """

    query_id: bytes
    commitment: bytes
    index_share: int
    batch_epoch: int

    def encode(self) -> bytes:
        if len(self.query_id) != QUERY_ID_LEN or len(self.commitment) != COMMITMENT_LEN:
            raise WireError("bad envelope field lengths")
        return (
            self.query_id
            + self.commitment
            + struct.pack(">HQ", self.index_share, self.batch_epoch)
        )

    @classmethod
    def decode(cls, data: bytes) -> "QueryEnvelope":
        need = QUERY_ID_LEN + COMMITMENT_LEN + 2 + 8
        if len(data) != need:
            raise WireError(f"envelope must be {need} bytes, got {len(data)}")
        qid = data[:QUERY_ID_LEN]
        com = data[QUERY_ID_LEN : QUERY_ID_LEN + COMMITMENT_LEN]
        share, epoch = struct.unpack(">HQ", data[QUERY_ID_LEN + COMMITMENT_LEN :])
        return cls(query_id=qid, commitment=com, index_share=share, batch_epoch=epoch)


@dataclass(frozen=True)
class ShareResponse:
    query_id: bytes
    share_index: int  # 1 = data server, 2 = index server
    proof_share: bytes

    def encode(self) -> bytes:
        return self.query_id + bytes([self.share_index]) + self.proof_share

    @classmethod
    def decode(cls, data: bytes) -> "ShareResponse":
        if len(data) < QUERY_ID_LEN + 1:
            raise WireError("short share response")
        return cls(
            query_id=data[:QUERY_ID_LEN],
            share_index=data[QUERY_ID_LEN],
            proof_share=data[QUERY_ID_LEN + 1 :],
        )


@dataclass(frozen=True)
class Reject:
    """Constant-size rejection; padded to the ShareResponse body length so
    deny responses are byte-length-identical to allow responses."""

    query_id: bytes
    reason: int  # 1 malformed, 2 duplicate, 3 denied, 4 busy (retry later), 5 failed

    REASON_MALFORMED = 1
    REASON_DUPLICATE = 2
    REASON_DENIED = 3
    REASON_BUSY = 4
    REASON_FAILED = 5

    def encode(self, response_len: int) -> bytes:
        body = self.query_id + bytes([self.reason])
        pad = QUERY_ID_LEN + 1 + response_len - len(body)
        return body + b"\x00" * pad

    @classmethod
    def decode(cls, data: bytes) -> "Reject":
        if len(data) < QUERY_ID_LEN + 1:
            raise WireError("short reject")
        return cls(query_id=data[:QUERY_ID_LEN], reason=data[QUERY_ID_LEN])


@dataclass(frozen=True)
class BatchConfig:
    max_batch: int = 1
    max_wait_ms: float = 5.0

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
