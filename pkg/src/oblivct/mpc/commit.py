"""Hash commitments: binding via collision resistance, hiding via nonce entropy."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

NONCE_LEN = 32
COMMIT_LEN = 32

_DOMAIN = b"oblivct-commit-v1"


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != COMMIT_LEN:
            raise ValueError("commitment digest must be 32 bytes")


def commit(value: bytes, nonce: bytes) -> Commitment:
    if len(nonce) != NONCE_LEN:
        raise ValueError("nonce must be 32 bytes")
    h = hashlib.sha256(_DOMAIN + len(value).to_bytes(4, "big") + value + nonce)
    return Commitment(h.digest())


def verify_commitment(c: Commitment, value: bytes, nonce: bytes) -> bool:
    if len(nonce) != NONCE_LEN:
        return False
    return hmac.compare_digest(commit(value, nonce).digest, c.digest)
