"""Single-pass eviction: metadata scans plus the one-block-in-hand pass.

Positions along an eviction path are indexed 0..L+1 where position 0 is
the stash and positions 1..L+1 are the buckets from root to leaf. A block
with leaf label x may sit at bucket positions 1..(1 + common-prefix-bits
of x and the path leaf), so deeper positions are "more evicted".

Tie-breaking is fixed so both the plaintext reference and the in-circuit
transcription agree: among candidate blocks with equal legal depth the one
at the deeper position wins, and within a position the lowest slot index
wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .core import Block, OramError, OramTree


@dataclass(frozen=True)
class SlotMeta:
    slot: int  # slot index within the position (bucket slot or stash slot)
    block_id: int
    leaf_label: int


@dataclass
class PathSnapshot:
    """Immutable view of stash + one root-to-leaf path."""

    leaf: int
    height: int  # L
    bucket_size: int
    stash_capacity: int
    # positions[p] lists the real blocks at position p (0 = stash).
    positions: List[List[SlotMeta]]
    bucket_indices: List[int]  # tree bucket index per position 1..L+1

    @classmethod
    def capture(cls, tree: OramTree, leaf: int) -> "PathSnapshot":
        positions: List[List[SlotMeta]] = []
        stash = [
            SlotMeta(slot=i, block_id=b.block_id, leaf_label=b.leaf_label)
            for i, b in enumerate(tree.stash_slots())
            if not b.is_dummy
        ]
        positions.append(stash)
        buckets = tree.path_buckets(leaf)
        for b in buckets:
            metas = [
                SlotMeta(slot=s, block_id=blk.block_id, leaf_label=blk.leaf_label)
                for s, blk in enumerate(tree.bucket_slots(b))
                if not blk.is_dummy
            ]
            positions.append(metas)
        return cls(
            leaf=leaf,
            height=tree.height,
            bucket_size=tree.config.bucket_size,
            stash_capacity=tree.config.stash_capacity,
            positions=positions,
            bucket_indices=buckets,
        )

    def legal_position(self, leaf_label: int) -> int:
        """Deepest position (1..L+1) where a block with this label may rest."""
        diff = leaf_label ^ self.leaf
        cpl = self.height - diff.bit_length()
        return cpl + 1

    def free_slots(self, position: int) -> int:
        cap = self.stash_capacity if position == 0 else self.bucket_size
        return cap - len(self.positions[position])


@dataclass(frozen=True)
class DeepestEntry:
    src_position: int
    slot: int
    block_id: int
    reach: int  # deepest legal position of that block


def _best_in_position(snap: PathSnapshot, position: int) -> Optional[DeepestEntry]:
    """Deepest-reaching real block at one position; lowest slot breaks ties."""
    best: Optional[DeepestEntry] = None
    for meta in snap.positions[position]:
        reach = snap.legal_position(meta.leaf_label)
        if best is None or reach > best.reach or (reach == best.reach and meta.slot < best.slot):
            best = DeepestEntry(
                src_position=position, slot=meta.slot, block_id=meta.block_id, reach=reach
            )
    return best


def prepare_deepest(snap: PathSnapshot) -> List[Optional[DeepestEntry]]:
    """deepest[p]: the block from positions < p that can legally descend to
    p or beyond (None where no block reaches p). Deeper source positions win
    ties on reach; within a position, the lowest slot index wins."""
    L = snap.height
    deepest: List[Optional[DeepestEntry]] = [None] * (L + 2)
    src: Optional[DeepestEntry] = _best_in_position(snap, 0)
    goal = src.reach if src is not None else 0
    for p in range(1, L + 2):
        if src is not None and goal >= p:
            deepest[p] = src
        cand = _best_in_position(snap, p)
        if cand is not None and cand.reach >= goal:
            src = cand
            goal = cand.reach
    return deepest


def prepare_target(
    snap: PathSnapshot, deepest: List[Optional[DeepestEntry]]
) -> List[Optional[int]]:
    """target[p]: destination position for the block leaving position p."""
    L = snap.height
    target: List[Optional[int]] = [None] * (L + 2)
    dest: Optional[int] = None
    src: Optional[int] = None
    for p in range(L + 1, -1, -1):
        if src == p:
            target[p] = dest
            dest = None
            src = None
        can_receive = p >= 1 and (
            (dest is None and snap.free_slots(p) > 0) or target[p] is not None
        )
        if can_receive and deepest[p] is not None:
            src = deepest[p].src_position
            dest = p
    return target


def evict_onepass(tree: OramTree, leaf: int) -> "EvictionPlan":
    """One root-to-leaf pass holding at most one block in transit.

    Pure planning: the returned EvictionPlan describes the moves; applying
    it mutates the tree.
    """
    from .batch import EvictionPlan, Move

    snap = PathSnapshot.capture(tree, leaf)
    deepest = prepare_deepest(snap)
    target = prepare_target(snap, deepest)
    L = snap.height
    Z = snap.bucket_size

    # Simulated occupancy per position: slot -> block_id (real blocks only).
    sim: List[dict] = []
    sim.append({m.slot: m for m in snap.positions[0]})
    for p in range(1, L + 2):
        sim.append({m.slot: m for m in snap.positions[p]})

    def locator(position: int, slot: int) -> int:
        if position == 0:
            return tree.stash_locator(slot)
        return tree.bucket_locator(snap.bucket_indices[position - 1], slot)

    moves: List[Move] = []
    hold: Optional[SlotMeta] = None
    hold_src: Optional[Tuple[int, int]] = None
    dest: Optional[int] = None
    for p in range(0, L + 2):
        towrite: Optional[SlotMeta] = None
        towrite_src: Optional[Tuple[int, int]] = None
        if hold is not None and dest == p:
            towrite, towrite_src = hold, hold_src
            hold, hold_src, dest = None, None, None
        if target[p] is not None:
            # Remove the deepest legal block at p (same rule as the scans).
            pick: Optional[SlotMeta] = None
            pick_reach = -1
            for slot in sorted(sim[p]):
                meta = sim[p][slot]
                reach = snap.legal_position(meta.leaf_label)
                if reach > pick_reach:
                    pick, pick_reach = meta, reach
            if pick is None:
                raise OramError("eviction pass expected a removable block")
            del sim[p][pick.slot]
            hold = pick
            hold_src = (p, pick.slot)
            dest = target[p]
        if towrite is not None:
            cap = snap.stash_capacity if p == 0 else Z
            free = next(s for s in range(cap) if s not in sim[p])
            sim[p][free] = towrite
            src_pos, src_slot = towrite_src
            blk = tree.slots[locator(src_pos, src_slot)]
            moves.append(
                Move(src=locator(src_pos, src_slot), dst=locator(p, free), block=blk)
            )
    if hold is not None:
        raise OramError("eviction pass ended still holding a block")
    return EvictionPlan(path_leaf=leaf, moves=moves)
