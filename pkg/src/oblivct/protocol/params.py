"""System geometry shared by both servers and the client.

Block-id layout (heap numbering, so sibling ids are bit-concatenations and
circuits never need adders):

    node at merkle level l (0 = leaves), index j  ->  id = 2^(K-l) + j
    certificate record for leaf i                 ->  id = 2^(K+1) + i
    id 0 unused

which packs all ids densely into [1, 3C) for a capacity-C tree, so the
ORAM holds 3C blocks. Node payloads are the 32-byte digests; record
payloads are canonical record bytes padded to D.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import List, Tuple

from ..oram.core import OramConfig

DIGEST_BITS = 256


@dataclass(frozen=True)
class SystemParams:
    tree_capacity: int  # C, power of two, >= 2
    bucket_size: int = 3
    payload_len: int = 64  # D bytes; records must serialize within this
    stash_capacity: int = 24  # protocol profile; linearly scanned in-circuit

    def __post_init__(self):
        c = self.tree_capacity
        if c < 2 or c & (c - 1):
            raise ValueError("tree_capacity must be a power of two >= 2")
        if self.payload_len < 32:
            raise ValueError("payload_len must hold a 32-byte digest")

    # -- geometry --

    @property
    def merkle_depth(self) -> int:  # K
        return self.tree_capacity.bit_length() - 1

    @property
    def num_blocks(self) -> int:
        return 3 * self.tree_capacity

    @property
    def oram_config(self) -> OramConfig:
        return OramConfig(
            num_blocks=self.num_blocks,
            bucket_size=self.bucket_size,
            payload_len=self.payload_len,
            stash_capacity=self.stash_capacity,
        )

    @property
    def height(self) -> int:  # ORAM tree height L
        return self.oram_config.height

    @property
    def id_bits(self) -> int:
        return max(1, (self.num_blocks - 1).bit_length())

    @property
    def label_bits(self) -> int:
        return max(1, self.height)

    @property
    def rec_bits(self) -> int:
        """Slot record width: real flag, block id, leaf label."""
        return 1 + self.id_bits + self.label_bits

    @property
    def index_bits(self) -> int:
        """Client leaf-index share width (fixed 16-bit field on the wire)."""
        return 16

    @property
    def path_positions(self) -> int:
        return self.height + 2  # stash + buckets root..leaf

    @property
    def slots_per_circuit(self) -> int:
        return self.stash_capacity + (self.height + 1) * self.bucket_size

    @property
    def response_len(self) -> int:
        return self.payload_len + 32 * self.merkle_depth

    # -- block id layout --

    def node_block_id(self, level: int, index: int) -> int:
        if not (0 <= level <= self.merkle_depth):
            raise ValueError("level out of range")
        return (1 << (self.merkle_depth - level)) + index

    def record_block_id(self, leaf_index: int) -> int:
        return (1 << (self.merkle_depth + 1)) + leaf_index

    def sibling_block_id(self, leaf_index: int, level: int) -> int:
        return self.node_block_id(level, (leaf_index >> level) ^ 1)

    # -- per-query access schedule: K sibling fetches then the record --

    def accesses(self) -> List[Tuple[str, int]]:
        return [("sib", d) for d in range(self.merkle_depth)] + [("rec", 0)]

    def posmap_segment(self, kind: str, level: int) -> Tuple[int, int]:
        """(base id, width) of the posmap/heap id range one access touches."""
        k = self.merkle_depth
        if kind == "sib":
            return (1 << (k - level), 1 << (k - level))
        return (1 << (k + 1), self.tree_capacity)

    def payload_bits(self, kind: str) -> int:
        return DIGEST_BITS if kind == "sib" else self.payload_len * 8

    def digest(self) -> bytes:
        """Parameter digest exchanged at handshake; all knobs that must agree."""
        text = (
            f"C={self.tree_capacity},Z={self.bucket_size},D={self.payload_len},"
            f"S={self.stash_capacity}"
        )
        return hashlib.sha256(text.encode()).digest()
