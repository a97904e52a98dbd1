"""XOR-shared ORAM state as the two servers hold it.

Slots carry only fixed-width metadata records (real flag, block id, leaf
label); payloads live in a block-id-indexed heap that never moves, and the
position map is a flat shared array. Splitting a plaintext tree gives each
dummy slot fresh random filler under a zero real-flag, so shares reveal no
occupancy structure and slot contents are pairwise distinct.

combine_state reconstructs the plaintext tree (the canonical dummy for
zero-flag slots), which is what the shadow-oracle tests compare against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..rng import RandomSource
from .core import Block, OramConfig, OramError, OramTree, PositionMap


@dataclass
class ShareOramState:
    config: OramConfig
    slot_flags: np.ndarray  # (num_slots,) uint8, share of the real bit
    slot_ids: np.ndarray  # (num_slots,) uint32, share of block id
    slot_labels: np.ndarray  # (num_slots,) uint32, share of leaf label
    heap: np.ndarray  # (num_blocks, payload_len) uint8 payload share
    posmap: np.ndarray  # (num_blocks,) uint32 leaf-label share

    @property
    def id_bits(self) -> int:
        return max(1, (self.config.num_blocks - 1).bit_length())

    @property
    def label_bits(self) -> int:
        return max(1, self.config.height)

    def copy(self) -> "ShareOramState":
        return ShareOramState(
            config=self.config,
            slot_flags=self.slot_flags.copy(),
            slot_ids=self.slot_ids.copy(),
            slot_labels=self.slot_labels.copy(),
            heap=self.heap.copy(),
            posmap=self.posmap.copy(),
        )

    def to_bytes(self) -> bytes:
        cfg = self.config
        head = b"".join(
            v.to_bytes(8, "little")
            for v in (
                cfg.num_blocks,
                cfg.bucket_size,
                cfg.payload_len,
                cfg.stash_capacity,
                cfg.evictions_per_access,
            )
        ) + (b"\x01" if cfg.eviction_mode == "access+scheduled" else b"\x00")
        return (
            head
            + self.slot_flags.tobytes()
            + self.slot_ids.astype("<u4").tobytes()
            + self.slot_labels.astype("<u4").tobytes()
            + self.heap.tobytes()
            + self.posmap.astype("<u4").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ShareOramState":
        vals = [int.from_bytes(data[i * 8 : (i + 1) * 8], "little") for i in range(5)]
        mode = "access+scheduled" if data[40] == 1 else "scheduled"
        cfg = OramConfig(
            num_blocks=vals[0],
            bucket_size=vals[1],
            payload_len=vals[2],
            stash_capacity=vals[3],
            evictions_per_access=vals[4],
            eviction_mode=mode,
        )
        off = 41
        ns = cfg.num_slots
        n = cfg.num_blocks
        need = off + ns + 4 * ns + 4 * ns + n * cfg.payload_len + 4 * n
        if len(data) != need:
            raise OramError("share state truncated or oversized")
        flags = np.frombuffer(data, dtype=np.uint8, count=ns, offset=off).copy()
        off += ns
        ids = np.frombuffer(data, dtype="<u4", count=ns, offset=off).astype(np.uint32)
        off += 4 * ns
        labels = np.frombuffer(data, dtype="<u4", count=ns, offset=off).astype(np.uint32)
        off += 4 * ns
        heap = (
            np.frombuffer(data, dtype=np.uint8, count=n * cfg.payload_len, offset=off)
            .reshape(n, cfg.payload_len)
            .copy()
        )
        off += n * cfg.payload_len
        posmap = np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(np.uint32)
        return cls(
            config=cfg, slot_flags=flags, slot_ids=ids, slot_labels=labels, heap=heap, posmap=posmap
        )


def split_state(
    tree: OramTree, posmap: PositionMap, rng: RandomSource
) -> Tuple[ShareOramState, ShareOramState]:
    cfg = tree.config
    ns = cfg.num_slots
    n = cfg.num_blocks
    id_mask = (1 << max(1, (n - 1).bit_length())) - 1
    label_mask = (1 << max(1, cfg.height)) - 1

    flags = np.zeros(ns, dtype=np.uint8)
    ids = np.zeros(ns, dtype=np.uint32)
    labels = np.zeros(ns, dtype=np.uint32)
    heap = np.zeros((n, cfg.payload_len), dtype=np.uint8)
    for i, blk in enumerate(tree.slots):
        if blk.is_dummy:
            ids[i] = rng.randbelow(id_mask + 1)
            labels[i] = rng.randbelow(label_mask + 1)
        else:
            flags[i] = 1
            ids[i] = blk.block_id
            labels[i] = blk.leaf_label
            heap[blk.block_id] = np.frombuffer(blk.payload, dtype=np.uint8)
    pm = np.asarray(posmap.entries, dtype=np.uint32)

    flags1 = rng.u8_array(ns) & 1
    ids1 = np.frombuffer(rng.bytes(4 * ns), dtype="<u4").astype(np.uint32) & id_mask
    labels1 = np.frombuffer(rng.bytes(4 * ns), dtype="<u4").astype(np.uint32) & label_mask
    heap1 = rng.u8_array((n, cfg.payload_len))
    pm1 = np.frombuffer(rng.bytes(4 * n), dtype="<u4").astype(np.uint32) & label_mask

    s1 = ShareOramState(
        config=cfg, slot_flags=flags1, slot_ids=ids1, slot_labels=labels1, heap=heap1, posmap=pm1
    )
    s2 = ShareOramState(
        config=cfg,
        slot_flags=flags ^ flags1,
        slot_ids=ids ^ ids1,
        slot_labels=labels ^ labels1,
        heap=heap ^ heap1,
        posmap=pm ^ pm1,
    )
    return s1, s2


def combine_state(s1: ShareOramState, s2: ShareOramState) -> Tuple[OramTree, PositionMap]:
    if s1.config != s2.config:
        raise OramError("share halves disagree on parameters")
    cfg = s1.config
    flags = s1.slot_flags ^ s2.slot_flags
    ids = s1.slot_ids ^ s2.slot_ids
    labels = s1.slot_labels ^ s2.slot_labels
    heap = s1.heap ^ s2.heap
    pm = s1.posmap ^ s2.posmap
    tree = OramTree(cfg)
    for i in range(cfg.num_slots):
        if flags[i] & 1:
            bid = int(ids[i])
            if bid >= cfg.num_blocks:
                raise OramError(f"combined block id {bid} out of range at slot {i}")
            tree.slots[i] = Block(
                block_id=bid,
                leaf_label=int(labels[i]),
                payload=heap[bid].tobytes(),
            )
    posmap = PositionMap([int(v) for v in pm], cfg.num_leaves)
    return tree, posmap
