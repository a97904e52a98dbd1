"""XOR secret sharing."""

from __future__ import annotations

from dataclasses import dataclass

from ..rng import RandomSource


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


@dataclass(frozen=True)
class Share:
    """One half of an XOR sharing; alone it is uniformly distributed."""

    data: bytes

    def __len__(self) -> int:
        return len(self.data)


def share_split(secret: bytes, rng: RandomSource) -> tuple[Share, Share]:
    mask = rng.bytes(len(secret))
    return Share(mask), Share(xor_bytes(secret, mask))


def share_combine(a: Share, b: Share) -> bytes:
    return xor_bytes(a.data, b.data)
