"""Garbled-circuit engine: free-XOR, point-and-permute, authenticated rows.

Scheme
------
Every wire w has labels (W0, W0 xor delta) for one global 16-byte delta
whose color bit is forced to 1, so the two labels of a wire always differ
in color. XOR gates are label-XORs (no table); NOT gates are free (the
output zero-label is the input one-label, and the evaluator passes the
label through unchanged). Each AND gate emits four 24-byte rows ordered by
the input labels' color bits; a row encrypts the output label plus an
8-byte authenticity tag, so exactly one row authenticates for the
evaluator and a corrupted row aborts evaluation rather than yielding a
wrong label.

Row pads come from a hash-based key derivation built on fixed-key AES
(Matyas-Meyer-Oseas: H(x) = AES_K(x) xor x), batched into one bulk ECB
call per circuit layer. Labels are handled as pairs of little-endian
uint64 words; that representation plus the layer batching is what keeps
garbling and evaluation in the hundreds of nanoseconds per gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..rng import RandomSource
from .circuits import BoolCircuit, GateOp, LayeredCircuit

LABEL_LEN = 16
TAG_LEN = 8
ROW_LEN = LABEL_LEN + TAG_LEN
_WORDS = 3  # row words: 2 label words + 1 tag word

_MMO_KEY = bytes(range(16))  # fixed public key; MMO turns AES into a hash

# Color bit: LSB of byte 15, i.e. bit 56 of the second little-endian word.
_COLOR_SHIFT = np.uint64(56)
_ONE = np.uint64(1)


class GarbledEvaluationError(Exception):
    """A garbled row failed its authenticity check."""


def labels_to_bytes(labels: np.ndarray) -> bytes:
    return labels.astype("<u8", copy=False).tobytes()

def labels_from_bytes(data: bytes) -> np.ndarray:
    arr = np.frombuffer(data, dtype="<u8")
    return arr.reshape(-1, 2).copy()


def _color(labels: np.ndarray) -> np.ndarray:
    """Color bits of (n, 2) label array -> (n,) uint64 in {0,1}."""
    return (labels[:, 1] >> _COLOR_SHIFT) & _ONE


def _mmo(blocks: np.ndarray) -> np.ndarray:
    """MMO hash of each 16-byte block (shape (n, 2) uint64)."""
    enc = Cipher(algorithms.AES(_MMO_KEY), modes.ECB()).encryptor()
    n = blocks.nbytes
    buf = np.empty(n + 16, dtype=np.uint8)  # update_into wants block-size slack
    enc.update_into(memoryview(blocks).cast("B"), memoryview(buf))
    out = buf[:n].view("<u8").reshape(blocks.shape)
    out ^= blocks
    return out


def _sigma(labels: np.ndarray) -> np.ndarray:
    """Linear mixing applied to the second KDF operand: swap words, rotate bits.

    Breaks the A/B symmetry and the free-XOR linear relations among row keys.
    """
    rot = (labels << _ONE) | (labels >> np.uint64(63))
    return rot[:, ::-1]


@dataclass
class GarbledCircuit:
    """The transferable artifact: tables plus output select bits."""

    circuit: BoolCircuit
    tables: np.ndarray  # (n_and, 4, 3) uint64 rows
    output_decoding: np.ndarray  # (n_outputs,) uint8 select bits

    def tables_bytes(self) -> bytes:
        return self.tables.astype("<u8", copy=False).tobytes()

    @classmethod
    def from_tables_bytes(
        cls, circuit: BoolCircuit, data: bytes, output_decoding: bytes
    ) -> "GarbledCircuit":
        n_and = circuit.n_and
        tables = np.frombuffer(data, dtype="<u8").reshape(n_and, 4, _WORDS).copy()
        dec = np.frombuffer(output_decoding, dtype=np.uint8).copy()
        return cls(circuit=circuit, tables=tables, output_decoding=dec)


@dataclass
class GarblingKeys:
    """Garbler-side secrets for one garbled instance."""

    input_labels0: np.ndarray  # (n_inputs, 2) uint64
    delta: np.ndarray  # (2,) uint64
    output_labels0: np.ndarray  # (n_outputs, 2) uint64

    def input_pair(self, wire: int) -> Tuple[bytes, bytes]:
        l0 = self.input_labels0[wire]
        return labels_to_bytes(l0), labels_to_bytes(l0 ^ self.delta)

    def select_input_labels(self, first_wire: int, bits: Sequence[int]) -> np.ndarray:
        """Labels for consecutive input wires carrying `bits`."""
        bits_arr = np.asarray(bits, dtype=np.uint64).reshape(-1, 1)
        base = self.input_labels0[first_wire : first_wire + len(bits_arr)]
        return base ^ (self.delta * bits_arr)

    def decode_returned_outputs(self, labels: np.ndarray, first: int = 0) -> np.ndarray:
        """Read bits from output labels the evaluator sent back."""
        span = self.output_labels0[first : first + len(labels)]
        zero = np.all(labels == span, axis=1)
        one = np.all(labels == (span ^ self.delta), axis=1)
        if not np.all(zero | one):
            raise GarbledEvaluationError("returned output label matches neither candidate")
        return one.astype(np.uint8)


def _rand_labels(rng: RandomSource, n: int) -> np.ndarray:
    return np.frombuffer(rng.bytes(n * LABEL_LEN), dtype="<u8").reshape(n, 2).copy()


def garble(
    circuit: BoolCircuit,
    rng: RandomSource,
    layered: Optional[LayeredCircuit] = None,
) -> Tuple[GarbledCircuit, GarblingKeys, np.ndarray]:
    """Garble `circuit`; returns (garbled circuit, garbler keys, output decoding)."""
    circuit.validate()
    lc = layered if layered is not None else circuit.layers()
    n_in = circuit.n_inputs
    labels0 = np.empty((circuit.n_wires, 2), dtype=np.uint64)
    delta = _rand_labels(rng, 1)[0]
    delta[1] |= _ONE << _COLOR_SHIFT
    labels0[:n_in] = _rand_labels(rng, n_in)
    tables = np.empty((lc.n_and, 4, _WORDS), dtype=np.uint64)

    for layer in lc.layers:
        if layer.op == GateOp.XOR:
            labels0[layer.out] = labels0[layer.in_a] ^ labels0[layer.in_b]
        elif layer.op == GateOp.NOT:
            labels0[layer.out] = labels0[layer.in_a] ^ delta
        else:
            a0 = labels0[layer.in_a]
            b0 = labels0[layer.in_b]
            g = len(layer.out)
            o0 = _rand_labels(rng, g)
            labels0[layer.out] = o0
            ca = _color(a0)
            cb = _color(b0)
            gid = layer.table_idx.astype(np.uint64)
            # kdf_in[block, row]: all 8 KDF blocks per gate in one buffer.
            kdf_in = np.empty((2, 4, g, 2), dtype=np.uint64)
            out_labels = np.empty((4, g, 2), dtype=np.uint64)
            for r in range(4):
                p, q = r >> 1, r & 1
                # Full-width masks: all-ones where the color-p label is L1.
                ma = (np.uint64(0) - (ca ^ np.uint64(p))).reshape(g, 1)
                mb = (np.uint64(0) - (cb ^ np.uint64(q))).reshape(g, 1)
                base = (a0 ^ (delta & ma)) ^ _sigma(b0 ^ (delta & mb))
                out_labels[r] = o0 ^ (delta & (ma & mb))
                base[:, 0] ^= gid
                kdf_in[0, r] = base
                base[:, 1] ^= _ONE  # second KDF block tweak
                kdf_in[1, r] = base
            pads = _mmo(kdf_in.reshape(-1, 2)).reshape(2, 4, g, 2)
            rows = np.empty((g, 4, _WORDS), dtype=np.uint64)
            rows[:, :, :2] = (pads[0] ^ out_labels).transpose(1, 0, 2)
            rows[:, :, 2] = pads[1, :, :, 0].T  # tag pad; plaintext tag is zero
            tables[layer.table_idx] = rows

    out_wires = circuit.output_wires
    decoding = _color(labels0[out_wires]).astype(np.uint8)
    gc = GarbledCircuit(circuit=circuit, tables=tables, output_decoding=decoding)
    keys = GarblingKeys(
        input_labels0=labels0[:n_in].copy(),
        delta=delta,
        output_labels0=labels0[out_wires].copy(),
    )
    return gc, keys, decoding


def evaluate(
    gc: GarbledCircuit,
    input_labels: Union[np.ndarray, Dict[int, bytes]],
    layered: Optional[LayeredCircuit] = None,
) -> np.ndarray:
    """Evaluate with exactly one label per input wire; returns output labels.

    Aborts (GarbledEvaluationError) if any selected row fails its tag check,
    which is what a corrupted table or an invalid input label produces.
    """
    circuit = gc.circuit
    lc = layered if layered is not None else circuit.layers()
    n_in = circuit.n_inputs
    labels = np.empty((circuit.n_wires, 2), dtype=np.uint64)
    if isinstance(input_labels, dict):
        if len(input_labels) != n_in:
            raise GarbledEvaluationError("need exactly one label per input wire")
        for w, lab in input_labels.items():
            labels[w] = labels_from_bytes(lab)[0]
    else:
        if input_labels.shape != (n_in, 2):
            raise GarbledEvaluationError("need exactly one label per input wire")
        labels[:n_in] = input_labels

    for layer in lc.layers:
        if layer.op == GateOp.XOR:
            labels[layer.out] = labels[layer.in_a] ^ labels[layer.in_b]
        elif layer.op == GateOp.NOT:
            labels[layer.out] = labels[layer.in_a]
        else:
            a = labels[layer.in_a]
            b = labels[layer.in_b]
            g = len(layer.out)
            ridx = (_color(a) * 2 + _color(b)).astype(np.int64)
            rows = gc.tables[layer.table_idx, ridx]
            base = a ^ _sigma(b)
            base[:, 0] ^= layer.table_idx.astype(np.uint64)
            kdf_in = np.empty((2, g, 2), dtype=np.uint64)
            kdf_in[0] = base
            kdf_in[1] = base
            kdf_in[1, :, 1] ^= _ONE
            pads = _mmo(kdf_in.reshape(-1, 2)).reshape(2, g, 2)
            tags = rows[:, 2] ^ pads[1, :, 0]
            if tags.any():
                bad = int(np.flatnonzero(tags)[0])
                raise GarbledEvaluationError(
                    f"authenticity check failed at AND gate {int(layer.table_idx[bad])}"
                )
            labels[layer.out] = rows[:, :2] ^ pads[0]
    return labels[circuit.output_wires].copy()


def decode_outputs(output_labels: np.ndarray, output_decoding: np.ndarray) -> List[int]:
    bits = (_color(output_labels).astype(np.uint8) ^ output_decoding)
    return [int(b) for b in bits]
