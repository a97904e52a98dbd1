"""Eviction plans, batch composition, and permutation application.

A plan's moves are simultaneous relative to its source state: application
reads every source slot, clears them all, then writes every destination.
Composing a batch of serially-generated plans collapses intermediate
relocations so each slot is written at most once; a slot that a batch
leaves exactly as it started (only possible for write-then-vacate slots,
which begin free) is dropped from the composed update map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .core import Block, DUMMY_BLOCK_ID, OramError, OramTree


class CompositionError(OramError):
    pass


@dataclass(frozen=True)
class Move:
    src: Optional[int]  # None for a fresh insertion (first write of a block)
    dst: int
    block: Block

    @property
    def block_id(self) -> int:
        return self.block.block_id


@dataclass
class EvictionPlan:
    path_leaf: int
    moves: List[Move] = field(default_factory=list)


@dataclass
class TreePermutation:
    """Collapsed batch effect: slot locator -> final content (None = dummy)."""

    updates: Dict[int, Optional[Block]] = field(default_factory=dict)

    def touched(self) -> List[int]:
        return sorted(self.updates)


def apply_plan(tree: OramTree, plan: EvictionPlan) -> None:
    """Apply one plan: read all sources, clear them, write all destinations."""
    d = tree.config.payload_len
    picked: List[Block] = []
    for mv in plan.moves:
        if mv.src is not None:
            cur = tree.slots[mv.src]
            if cur.is_dummy or cur.block_id != mv.block_id:
                raise OramError(
                    f"plan expects block {mv.block_id} at slot {mv.src}, found "
                    f"{'dummy' if cur.is_dummy else cur.block_id}"
                )
        picked.append(mv.block)
    for mv in plan.moves:
        if mv.src is not None:
            tree.slots[mv.src] = Block.dummy(d)
    for mv, blk in zip(plan.moves, picked):
        if not tree.slots[mv.dst].is_dummy:
            raise OramError(f"plan writes into occupied slot {mv.dst}")
        tree.slots[mv.dst] = blk


def compose_batch(plans: List[EvictionPlan]) -> TreePermutation:
    """Collapse serially-generated plans into one at-most-once update map."""
    dummy_marker = object()
    state: Dict[int, object] = {}
    origin_free: Dict[int, bool] = {}  # slot began the batch free (known)
    for plan in plans:
        # A plan's moves are simultaneous relative to its source state:
        # validate all sources first, then clear them, then write.
        for mv in plan.moves:
            if mv.src is not None:
                prev = state.get(mv.src)
                if prev is not None:
                    if prev is dummy_marker or prev.block_id != mv.block_id:  # type: ignore[union-attr]
                        raise CompositionError(
                            f"move reads slot {mv.src} which does not hold block {mv.block_id}"
                        )
                else:
                    origin_free.setdefault(mv.src, False)
        for mv in plan.moves:
            if mv.src is not None:
                state[mv.src] = dummy_marker
        for mv in plan.moves:
            prev_dst = state.get(mv.dst)
            if prev_dst is None:
                origin_free.setdefault(mv.dst, True)
            elif prev_dst is not dummy_marker:
                raise CompositionError(f"move writes slot {mv.dst} which is occupied")
            state[mv.dst] = mv.block
    updates: Dict[int, Optional[Block]] = {}
    for loc, content in state.items():
        if content is dummy_marker:
            if origin_free.get(loc, False):
                continue  # began free, ends free: no write needed
            updates[loc] = None
        else:
            updates[loc] = content  # type: ignore[assignment]
    return TreePermutation(updates=updates)


def apply_permutation(tree: OramTree, perm: TreePermutation) -> None:
    """Overwrite exactly the slots in the update map; everything else is untouched."""
    d = tree.config.payload_len
    for loc in perm.updates:
        if not (0 <= loc < len(tree.slots)):
            raise OramError(f"slot locator {loc} out of range")
    for loc, blk in perm.updates.items():
        tree.slots[loc] = Block.dummy(d) if blk is None else blk


def invert_permutation(tree: OramTree, perm: TreePermutation) -> TreePermutation:
    """Permutation restoring the tree's current content at the touched slots."""
    inverse: Dict[int, Optional[Block]] = {}
    for loc in perm.updates:
        cur = tree.slots[loc]
        inverse[loc] = None if cur.is_dummy else cur
    return TreePermutation(updates=inverse)
