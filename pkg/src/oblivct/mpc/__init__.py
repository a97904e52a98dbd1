"""Semi-honest two-party computation primitives.

XOR secret sharing, garbled boolean circuits (free-XOR, point-and-permute),
1-of-2 oblivious transfer over a prime-order group, hash commitments, and
precomputation pools for exponentiations and garbled circuits.
"""

from .shares import Share, share_combine, share_split, xor_bytes
from .commit import Commitment, commit, verify_commitment
from .circuits import BoolCircuit, CircuitBuilder, GateOp, eval_circuit
from .garble import GarbledCircuit, GarbledEvaluationError, decode_outputs, evaluate, garble
from .ot import OtMessage, OtReceiver, OtRound, OtSender, ot_transfer
from .pool import PrecomputePool

__all__ = [
    "Share",
    "share_combine",
    "share_split",
    "xor_bytes",
    "Commitment",
    "commit",
    "verify_commitment",
    "BoolCircuit",
    "CircuitBuilder",
    "GateOp",
    "eval_circuit",
    "GarbledCircuit",
    "GarbledEvaluationError",
    "decode_outputs",
    "evaluate",
    "garble",
    "OtMessage",
    "OtReceiver",
    "OtRound",
    "OtSender",
    "ot_transfer",
    "PrecomputePool",
]
