"""Circuit ORAM: plaintext reference implementation and share-level state.

The plaintext tree (core/evict/batch) is the test oracle and the semantic
definition of access, single-pass eviction, and batch permutation
composition. The shares module splits the same state into the XOR-shared
form the protocol servers hold.
"""

from .core import (
    DUMMY_BLOCK_ID,
    Block,
    OramConfig,
    OramTree,
    PositionMap,
    StashOverflowError,
    access,
    init,
)
from .evict import PathSnapshot, evict_onepass, prepare_deepest, prepare_target
from .batch import (
    CompositionError,
    EvictionPlan,
    Move,
    TreePermutation,
    apply_permutation,
    apply_plan,
    compose_batch,
)
from .shares import ShareOramState, combine_state, split_state

__all__ = [
    "DUMMY_BLOCK_ID",
    "Block",
    "OramConfig",
    "OramTree",
    "PositionMap",
    "StashOverflowError",
    "access",
    "init",
    "PathSnapshot",
    "evict_onepass",
    "prepare_deepest",
    "prepare_target",
    "CompositionError",
    "EvictionPlan",
    "Move",
    "TreePermutation",
    "apply_permutation",
    "apply_plan",
    "compose_batch",
    "ShareOramState",
    "combine_state",
    "split_state",
]
