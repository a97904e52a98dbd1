"""Circuit ORAM tree state and the read-remap-evict access cycle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..rng import RandomSource

DUMMY_BLOCK_ID = 2**64 - 1

SNAPSHOT_MAGIC = b"ORAM"
SNAPSHOT_VERSION = 1


class OramError(Exception):
    pass


class StashOverflowError(OramError):
    """Stash bound exceeded: fatal configuration error, never a silent drop."""

    def __init__(self, capacity: int, occupancy: int, detail: str = ""):
        super().__init__(
            f"stash overflow: occupancy {occupancy} exceeds capacity {capacity}"
            + (f" ({detail})" if detail else "")
        )
        self.capacity = capacity
        self.occupancy = occupancy


@dataclass
class Block:
    block_id: int
    leaf_label: int
    payload: bytes

    @property
    def is_dummy(self) -> bool:
        return self.block_id == DUMMY_BLOCK_ID

    @classmethod
    def dummy(cls, payload_len: int) -> "Block":
        return cls(block_id=DUMMY_BLOCK_ID, leaf_label=0, payload=b"\x00" * payload_len)


@dataclass
class OramConfig:
    num_blocks: int
    bucket_size: int = 3
    payload_len: int = 64
    stash_capacity: int = 64
    # Two single-pass evictions per access: one along the just-read path,
    # one on the deterministic reverse-lexicographic schedule. The
    # alternative pure-scheduled mode exists as a recorded config choice.
    evictions_per_access: int = 2
    eviction_mode: str = "access+scheduled"  # or "scheduled"

    def __post_init__(self):
        if self.num_blocks < 1 or self.bucket_size < 1 or self.payload_len < 1:
            raise OramError("num_blocks, bucket_size, payload_len must be >= 1")
        if self.eviction_mode not in ("access+scheduled", "scheduled"):
            raise OramError(f"unknown eviction_mode {self.eviction_mode!r}")
        if self.evictions_per_access < 1:
            raise OramError("need at least one eviction per access")

    @property
    def height(self) -> int:
        return max(0, math.ceil(math.log2(self.num_blocks)))

    @property
    def num_leaves(self) -> int:
        return 1 << self.height

    @property
    def num_buckets(self) -> int:
        return (1 << (self.height + 1)) - 1

    @property
    def num_slots(self) -> int:
        return self.num_buckets * self.bucket_size + self.stash_capacity


def bit_reverse(value: int, width: int) -> int:
    out = 0
    for _ in range(width):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


class PositionMap:
    """block_id -> leaf label; total over [0, num_blocks)."""

    def __init__(self, entries: List[int], num_leaves: int):
        if any(not (0 <= e < num_leaves) for e in entries):
            raise OramError("leaf label out of range")
        self.entries = list(entries)
        self.num_leaves = num_leaves

    @classmethod
    def uniform(cls, num_blocks: int, num_leaves: int, rng: RandomSource) -> "PositionMap":
        return cls([rng.randbelow(num_leaves) for _ in range(num_blocks)], num_leaves)

    def __getitem__(self, block_id: int) -> int:
        return self.entries[block_id]

    def __setitem__(self, block_id: int, leaf: int) -> None:
        if not (0 <= leaf < self.num_leaves):
            raise OramError("leaf label out of range")
        self.entries[block_id] = leaf

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> "PositionMap":
        return PositionMap(list(self.entries), self.num_leaves)


class OramTree:
    """Complete binary tree of fixed-size buckets plus a fixed-size stash.

    Slots are addressed by global locators: bucket b slot s is b*Z + s,
    stash slot i is num_buckets*Z + i. The path invariant (every real block
    sits on the path to its leaf label, or in the stash) is checked by
    scan in check_path_invariant.
    """

    def __init__(self, config: OramConfig):
        self.config = config
        Z = config.bucket_size
        D = config.payload_len
        self.height = config.height
        self.num_leaves = config.num_leaves
        self.num_buckets = config.num_buckets
        self.slots: List[Block] = [Block.dummy(D) for _ in range(config.num_slots)]
        self.stash_base = self.num_buckets * Z
        self.evict_counter = 0

    # -- locators --

    def bucket_locator(self, bucket: int, slot: int) -> int:
        return bucket * self.config.bucket_size + slot

    def stash_locator(self, slot: int) -> int:
        return self.stash_base + slot

    def is_stash_locator(self, locator: int) -> bool:
        return locator >= self.stash_base

    def bucket_slots(self, bucket: int) -> List[Block]:
        Z = self.config.bucket_size
        return self.slots[bucket * Z : (bucket + 1) * Z]

    def stash_slots(self) -> List[Block]:
        return self.slots[self.stash_base :]

    def stash_occupancy(self) -> int:
        return sum(1 for b in self.stash_slots() if not b.is_dummy)

    # -- tree geometry --

    def path_buckets(self, leaf: int) -> List[int]:
        """Bucket indices root to leaf for a leaf label."""
        if not (0 <= leaf < self.num_leaves):
            raise OramError("leaf out of range")
        return [(1 << l) - 1 + (leaf >> (self.height - l)) for l in range(self.height + 1)]

    def path_locators(self, leaf: int) -> List[int]:
        Z = self.config.bucket_size
        locs = []
        for b in self.path_buckets(leaf):
            locs.extend(range(b * Z, (b + 1) * Z))
        return locs

    def scheduled_leaf(self) -> int:
        leaf = bit_reverse(self.evict_counter % self.num_leaves, self.height)
        self.evict_counter += 1
        return leaf

    # -- integrity --

    def check_path_invariant(self, posmap: PositionMap) -> None:
        """Full scan: each real block on its labelled path or in the stash,
        no block id present twice, labels consistent with the posmap."""
        seen = set()
        Z = self.config.bucket_size
        for b in range(self.num_buckets):
            level = (b + 1).bit_length() - 1
            for s in range(Z):
                blk = self.slots[self.bucket_locator(b, s)]
                if blk.is_dummy:
                    continue
                if blk.block_id in seen:
                    raise OramError(f"block {blk.block_id} present twice")
                seen.add(blk.block_id)
                if posmap[blk.block_id] != blk.leaf_label:
                    raise OramError(f"block {blk.block_id} label disagrees with posmap")
                path_bucket = (1 << level) - 1 + (blk.leaf_label >> (self.height - level))
                if path_bucket != b:
                    raise OramError(f"block {blk.block_id} off its path at bucket {b}")
        for i, blk in enumerate(self.stash_slots()):
            if blk.is_dummy:
                continue
            if blk.block_id in seen:
                raise OramError(f"block {blk.block_id} present twice")
            seen.add(blk.block_id)
            if posmap[blk.block_id] != blk.leaf_label:
                raise OramError(f"stash block {blk.block_id} label disagrees with posmap")

    # -- snapshot format: header, buckets in level order, then stash; LE ints --

    def serialize(self) -> bytes:
        cfg = self.config
        out = bytearray()
        out += SNAPSHOT_MAGIC
        out += SNAPSHOT_VERSION.to_bytes(2, "little")
        out += cfg.num_blocks.to_bytes(8, "little")
        out += cfg.bucket_size.to_bytes(2, "little")
        out += cfg.payload_len.to_bytes(4, "little")
        out += self.height.to_bytes(2, "little")
        out += cfg.stash_capacity.to_bytes(2, "little")
        out += self.evict_counter.to_bytes(8, "little")
        for blk in self.slots:
            out += blk.block_id.to_bytes(8, "little")
            out += blk.leaf_label.to_bytes(4, "little")
            payload = blk.payload if not blk.is_dummy else b"\x00" * cfg.payload_len
            out += payload
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "OramTree":
        if data[:4] != SNAPSHOT_MAGIC:
            raise OramError("bad snapshot magic")
        ver = int.from_bytes(data[4:6], "little")
        if ver != SNAPSHOT_VERSION:
            raise OramError(f"unsupported snapshot version {ver}")
        off = 6
        num_blocks = int.from_bytes(data[off : off + 8], "little"); off += 8
        z = int.from_bytes(data[off : off + 2], "little"); off += 2
        d = int.from_bytes(data[off : off + 4], "little"); off += 4
        height = int.from_bytes(data[off : off + 2], "little"); off += 2
        stash_cap = int.from_bytes(data[off : off + 2], "little"); off += 2
        counter = int.from_bytes(data[off : off + 8], "little"); off += 8
        cfg = OramConfig(
            num_blocks=num_blocks, bucket_size=z, payload_len=d, stash_capacity=stash_cap
        )
        if cfg.height != height:
            raise OramError("snapshot height disagrees with block count")
        tree = cls(cfg)
        tree.evict_counter = counter
        slot_len = 12 + d
        need = off + slot_len * cfg.num_slots
        if len(data) != need:
            raise OramError("snapshot truncated or oversized")
        for i in range(cfg.num_slots):
            bid = int.from_bytes(data[off : off + 8], "little"); off += 8
            leaf = int.from_bytes(data[off : off + 4], "little"); off += 4
            payload = data[off : off + d]; off += d
            if bid == DUMMY_BLOCK_ID:
                tree.slots[i] = Block.dummy(d)
            else:
                tree.slots[i] = Block(block_id=bid, leaf_label=leaf, payload=bytes(payload))
        return tree


def init(
    num_blocks: int,
    bucket_size: int,
    payload_len: int,
    rng: RandomSource,
    stash_capacity: int = 64,
    **kwargs,
) -> Tuple[OramTree, PositionMap]:
    """Empty tree (all dummies) plus an independently-uniform position map."""
    cfg = OramConfig(
        num_blocks=num_blocks,
        bucket_size=bucket_size,
        payload_len=payload_len,
        stash_capacity=stash_capacity,
        **kwargs,
    )
    tree = OramTree(cfg)
    posmap = PositionMap.uniform(num_blocks, cfg.num_leaves, rng)
    return tree, posmap


def _find_and_remove(tree: OramTree, leaf: int, block_id: int) -> Optional[Block]:
    for loc in tree.path_locators(leaf):
        blk = tree.slots[loc]
        if not blk.is_dummy and blk.block_id == block_id:
            tree.slots[loc] = Block.dummy(tree.config.payload_len)
            return blk
    for i in range(tree.config.stash_capacity):
        loc = tree.stash_locator(i)
        blk = tree.slots[loc]
        if not blk.is_dummy and blk.block_id == block_id:
            tree.slots[loc] = Block.dummy(tree.config.payload_len)
            return blk
    return None


def _stash_insert(tree: OramTree, block: Block) -> None:
    for i in range(tree.config.stash_capacity):
        loc = tree.stash_locator(i)
        if tree.slots[loc].is_dummy:
            tree.slots[loc] = block
            return
    raise StashOverflowError(tree.config.stash_capacity, tree.stash_occupancy() + 1)


def access(
    tree: OramTree,
    posmap: PositionMap,
    block_id: int,
    op: str,
    rng: RandomSource,
    new_payload: Optional[bytes] = None,
) -> bytes:
    """Read or write one block; remap it and run the configured evictions.

    Returns the prior payload; a block never written reads as all zeros.
    """
    from .evict import evict_onepass
    from .batch import apply_plan

    cfg = tree.config
    if not (0 <= block_id < cfg.num_blocks):
        raise OramError("block_id out of range")
    if op not in ("read", "write"):
        raise OramError(f"unknown op {op!r}")
    if op == "write":
        if new_payload is None or len(new_payload) != cfg.payload_len:
            raise OramError("write requires a payload of the configured length")

    old_leaf = posmap[block_id]
    new_leaf = rng.randbelow(tree.num_leaves)
    posmap[block_id] = new_leaf

    found = _find_and_remove(tree, old_leaf, block_id)
    prior = found.payload if found is not None else b"\x00" * cfg.payload_len

    if op == "write":
        _stash_insert(tree, Block(block_id=block_id, leaf_label=new_leaf, payload=new_payload))
    elif found is not None:
        _stash_insert(tree, Block(block_id=block_id, leaf_label=new_leaf, payload=found.payload))

    leaves = []
    if cfg.eviction_mode == "access+scheduled":
        leaves.append(old_leaf)
        for _ in range(cfg.evictions_per_access - 1):
            leaves.append(tree.scheduled_leaf())
    else:
        for _ in range(cfg.evictions_per_access):
            leaves.append(tree.scheduled_leaf())
    for leaf in leaves:
        plan = evict_onepass(tree, leaf)
        apply_plan(tree, plan)
    return prior
