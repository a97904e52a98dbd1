"""Boolean circuits over {AND, XOR, NOT} with a builder and layered compiler.

Wire numbering: wires 0..n_inputs_a-1 belong to party A (the evaluator in
this system), the next n_inputs_b to party B (the garbler), and every gate
writes one fresh wire in ascending order. Outputs are the final wires.

The builder works on "bits" that are either wire ids or compile-time
constants; constant operands are folded away so emitted circuits contain
no constant wires (except through an optionally reserved B-side zero input).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np


class GateOp(IntEnum):
    AND = 0
    XOR = 1
    NOT = 2


class CircuitError(Exception):
    pass


# Builder-level constant sentinels. Never present in a finished circuit.
CONST0 = -1
CONST1 = -2


@dataclass
class BoolCircuit:
    n_inputs_a: int
    n_inputs_b: int
    n_outputs: int
    # Parallel arrays: op[i], in_a[i], in_b[i] (== -1 for NOT), out[i].
    op: np.ndarray
    in_a: np.ndarray
    in_b: np.ndarray
    out: np.ndarray
    _validated: bool = field(default=False, repr=False, compare=False)
    _layered: Optional["LayeredCircuit"] = field(default=None, repr=False, compare=False)

    @property
    def n_inputs(self) -> int:
        return self.n_inputs_a + self.n_inputs_b

    @property
    def n_gates(self) -> int:
        return len(self.op)

    @property
    def n_wires(self) -> int:
        return self.n_inputs + self.n_gates

    @property
    def n_and(self) -> int:
        return int(np.count_nonzero(self.op == GateOp.AND))

    @property
    def output_wires(self) -> np.ndarray:
        return np.arange(self.n_wires - self.n_outputs, self.n_wires, dtype=np.int64)

    def validate(self) -> None:
        """Reject cycles, unwritten wires, rewrites, and dangling outputs.

        Wires must be written exactly once in ascending order (which also
        rules out cycles, since gates only read lower-numbered wires).
        """
        if self._validated:
            return
        n_in = self.n_inputs
        if self.n_outputs < 1 or self.n_outputs > self.n_gates:
            raise CircuitError("outputs must be produced by gates")
        expected_out = np.arange(n_in, n_in + self.n_gates, dtype=np.int64)
        if not np.array_equal(self.out, expected_out):
            bad = int(np.flatnonzero(self.out != expected_out)[0])
            raise CircuitError(f"gate {bad} writes wire {int(self.out[bad])}, expected {int(expected_out[bad])}")
        if np.any((self.in_a < 0) | (self.in_a >= self.out)):
            bad = int(np.flatnonzero((self.in_a < 0) | (self.in_a >= self.out))[0])
            raise CircuitError(f"gate {bad} reads unwritten wire {int(self.in_a[bad])}")
        is_not = self.op == GateOp.NOT
        if np.any(is_not & (self.in_b != -1)):
            bad = int(np.flatnonzero(is_not & (self.in_b != -1))[0])
            raise CircuitError(f"gate {bad}: NOT takes one input")
        binary = ~is_not
        bad_b = binary & ((self.in_b < 0) | (self.in_b >= self.out))
        if np.any(bad_b):
            bad = int(np.flatnonzero(bad_b)[0])
            raise CircuitError(f"gate {bad} reads unwritten wire {int(self.in_b[bad])}")
        if np.any((self.op < 0) | (self.op > 2)):
            raise CircuitError("unknown gate op")
        self._validated = True

    # -- layered form for vectorized garbling/evaluation (memoized) --

    def layers(self) -> "LayeredCircuit":
        if self._layered is None:
            self._layered = compile_layers(self)
        return self._layered


@dataclass
class Layer:
    op: GateOp
    in_a: np.ndarray
    in_b: Optional[np.ndarray]
    out: np.ndarray
    table_idx: Optional[np.ndarray]  # AND only: row into the garbled table block


@dataclass
class LayeredCircuit:
    circuit: BoolCircuit
    layers: List[Layer]
    n_and: int


def compile_layers(c: BoolCircuit) -> LayeredCircuit:
    n_in = c.n_inputs
    level = np.zeros(c.n_wires, dtype=np.int32)
    op = c.op
    in_a = c.in_a
    in_b = c.in_b
    # ASAP levels; gates are topologically ordered already.
    gate_level = np.zeros(c.n_gates, dtype=np.int32)
    for i in range(c.n_gates):
        la = level[in_a[i]]
        lb = level[in_b[i]] if in_b[i] >= 0 else 0
        lv = (la if la >= lb else lb) + 1
        gate_level[i] = lv
        level[n_in + i] = lv

    and_rank = np.cumsum(op == GateOp.AND) - 1  # table slot per AND gate
    layers: List[Layer] = []
    order = np.lexsort((np.arange(c.n_gates), op, gate_level))
    # Split runs of identical (level, op).
    keys = gate_level[order].astype(np.int64) * 4 + op[order]
    boundaries = np.flatnonzero(np.diff(keys)) + 1
    for chunk in np.split(order, boundaries):
        if len(chunk) == 0:
            continue
        g_op = GateOp(int(op[chunk[0]]))
        layer = Layer(
            op=g_op,
            in_a=in_a[chunk].astype(np.int64),
            in_b=in_b[chunk].astype(np.int64) if g_op != GateOp.NOT else None,
            out=(chunk + n_in).astype(np.int64),
            table_idx=and_rank[chunk].astype(np.int64) if g_op == GateOp.AND else None,
        )
        layers.append(layer)
    return LayeredCircuit(circuit=c, layers=layers, n_and=int(np.count_nonzero(op == GateOp.AND)))


def eval_circuit(c: BoolCircuit, bits_a: Sequence[int], bits_b: Sequence[int]) -> List[int]:
    """Plaintext evaluation (the oracle the garbled path is tested against)."""
    if len(bits_a) != c.n_inputs_a or len(bits_b) != c.n_inputs_b:
        raise CircuitError("input arity mismatch")
    vals = np.zeros(c.n_wires, dtype=np.uint8)
    vals[: c.n_inputs_a] = np.asarray(bits_a, dtype=np.uint8)
    vals[c.n_inputs_a : c.n_inputs] = np.asarray(bits_b, dtype=np.uint8)
    lc = c.layers()
    for layer in lc.layers:
        if layer.op == GateOp.XOR:
            vals[layer.out] = vals[layer.in_a] ^ vals[layer.in_b]
        elif layer.op == GateOp.AND:
            vals[layer.out] = vals[layer.in_a] & vals[layer.in_b]
        else:
            vals[layer.out] = vals[layer.in_a] ^ 1
    return [int(v) for v in vals[c.output_wires]]


class CircuitBuilder:
    """Accumulates gates; constant operands fold away at build time."""

    def __init__(self, n_inputs_a: int, n_inputs_b: int, reserve_const_zero: bool = False):
        self.n_inputs_a = n_inputs_a
        self._const_reserved = reserve_const_zero
        self.n_inputs_b = n_inputs_b + (1 if reserve_const_zero else 0)
        self._ops: List[int] = []
        self._as: List[int] = []
        self._bs: List[int] = []
        self._next = self.n_inputs_a + self.n_inputs_b

    @property
    def inputs_a(self) -> List[int]:
        return list(range(self.n_inputs_a))

    @property
    def inputs_b(self) -> List[int]:
        """B-side data inputs (excludes the reserved zero wire, if any)."""
        nb = self.n_inputs_b - (1 if self._const_reserved else 0)
        return list(range(self.n_inputs_a, self.n_inputs_a + nb))

    @property
    def const_zero_wire(self) -> int:
        if not self._const_reserved:
            raise CircuitError("builder was not created with reserve_const_zero")
        return self.n_inputs_a + self.n_inputs_b - 1

    def _emit(self, op: GateOp, a: int, b: int) -> int:
        w = self._next
        self._ops.append(int(op))
        self._as.append(a)
        self._bs.append(b)
        self._next += 1
        return w

    def bnot(self, x: int) -> int:
        if x == CONST0:
            return CONST1
        if x == CONST1:
            return CONST0
        return self._emit(GateOp.NOT, x, -1)

    def bxor(self, x: int, y: int) -> int:
        if x == y:
            return CONST0
        if x == CONST0:
            return y
        if y == CONST0:
            return x
        if x == CONST1:
            return self.bnot(y)
        if y == CONST1:
            return self.bnot(x)
        return self._emit(GateOp.XOR, x, y)

    def band(self, x: int, y: int) -> int:
        if x == CONST0 or y == CONST0:
            return CONST0
        if x == CONST1:
            return y
        if y == CONST1:
            return x
        if x == y:
            return x
        return self._emit(GateOp.AND, x, y)

    def bor(self, x: int, y: int) -> int:
        return self.bnot(self.band(self.bnot(x), self.bnot(y)))

    def mux(self, sel: int, on_true: int, on_false: int) -> int:
        """on_false XOR sel*(on_false XOR on_true)."""
        return self.bxor(on_false, self.band(sel, self.bxor(on_false, on_true)))

    # -- vector helpers (vectors are lists of bits, LSB first by convention) --

    def xor_vec(self, xs: Sequence[int], ys: Sequence[int]) -> List[int]:
        if len(xs) != len(ys):
            raise CircuitError("vector length mismatch")
        return [self.bxor(x, y) for x, y in zip(xs, ys)]

    def and_bit(self, bit: int, xs: Sequence[int]) -> List[int]:
        return [self.band(bit, x) for x in xs]

    def mux_vec(self, sel: int, on_true: Sequence[int], on_false: Sequence[int]) -> List[int]:
        if len(on_true) != len(on_false):
            raise CircuitError("vector length mismatch")
        return [self.mux(sel, t, f) for t, f in zip(on_true, on_false)]

    def and_tree(self, bits: Sequence[int]) -> int:
        items = list(bits)
        if not items:
            return CONST1
        while len(items) > 1:
            nxt = []
            for i in range(0, len(items) - 1, 2):
                nxt.append(self.band(items[i], items[i + 1]))
            if len(items) % 2:
                nxt.append(items[-1])
            items = nxt
        return items[0]

    def or_tree(self, bits: Sequence[int]) -> int:
        return self.bnot(self.and_tree([self.bnot(b) for b in bits]))

    def eq_vec(self, xs: Sequence[int], ys: Sequence[int]) -> int:
        return self.and_tree([self.bnot(self.bxor(x, y)) for x, y in zip(xs, ys)])

    def lt_vec(self, xs: Sequence[int], ys: Sequence[int]) -> int:
        """xs < ys, unsigned, LSB-first vectors of equal length."""
        if len(xs) != len(ys):
            raise CircuitError("vector length mismatch")
        lt = CONST0
        for x, y in zip(xs, ys):  # LSB to MSB; later bits dominate
            e = self.bnot(self.bxor(x, y))
            lt = self.mux(e, lt, y)  # if bits differ, y=1 means xs<ys at this bit
        return lt

    def const_vec(self, value: int, width: int) -> List[int]:
        return [CONST1 if (value >> i) & 1 else CONST0 for i in range(width)]

    def mux_tree(self, sel: Sequence[int], entries: Sequence[Sequence[int]]) -> List[int]:
        """Select entries[index] where index bits are sel (LSB first).

        len(entries) must be 2**len(sel); width*(len(entries)-1) AND gates.
        """
        if len(entries) != 1 << len(sel):
            raise CircuitError("mux_tree arity mismatch")
        level = [list(e) for e in entries]
        for s in sel:
            nxt = []
            for i in range(0, len(level), 2):
                nxt.append(self.mux_vec(s, level[i + 1], level[i]))
            level = nxt
        return level[0]

    def one_hot(self, sel: Sequence[int]) -> List[int]:
        """2**len(sel) indicator bits for the value encoded by sel."""
        hot = [CONST1]
        for s in sel:
            ns = self.bnot(s)
            nxt = []
            for h in hot:
                nxt.append(self.band(h, ns))
            for h in hot:
                nxt.append(self.band(h, s))
            # Order: index bit pattern grows LSB-first, so entry i of nxt
            # corresponds to (previous index) + (s << level).
            hot = nxt
        return hot

    def finish(self, outputs: Sequence[int]) -> BoolCircuit:
        outs = list(outputs)
        if not outs:
            raise CircuitError("circuit needs at least one output")
        # Materialize constant outputs through the reserved zero wire.
        if any(o in (CONST0, CONST1) for o in outs):
            zero = self.const_zero_wire  # raises if not reserved
            outs = [
                (zero if o == CONST0 else self.bnot(zero)) if o in (CONST0, CONST1) else o
                for o in outs
            ]
        # Outputs must be the final wires, in order; re-emit through double
        # negation (free in the garbling scheme) unless already in place.
        # Two separate sweeps so the second-NOT wires land contiguously last.
        n_in = self.n_inputs_a + self.n_inputs_b
        already = self._next - len(outs) >= n_in and all(
            o == self._next - len(outs) + i for i, o in enumerate(outs)
        )
        if not already:
            firsts = [self.bnot(o) for o in outs]
            outs = [self.bnot(o) for o in firsts]
        return BoolCircuit(
            n_inputs_a=self.n_inputs_a,
            n_inputs_b=self.n_inputs_b,
            n_outputs=len(outs),
            op=np.asarray(self._ops, dtype=np.int8),
            in_a=np.asarray(self._as, dtype=np.int64),
            in_b=np.asarray(self._bs, dtype=np.int64),
            out=np.arange(
                self.n_inputs_a + self.n_inputs_b,
                self.n_inputs_a + self.n_inputs_b + len(self._ops),
                dtype=np.int64,
            ),
        )


# -- external circuit file format --

_OP_NAMES = {GateOp.AND: "AND", GateOp.XOR: "XOR", GateOp.NOT: "NOT"}
_NAME_OPS = {v: k for k, v in _OP_NAMES.items()}
_HEADER_RE = re.compile(r"^INPUTS_A\s+(\d+)\s+INPUTS_B\s+(\d+)\s+OUTPUTS\s+(\d+)$")


def save_circuit(c: BoolCircuit) -> str:
    lines = [f"INPUTS_A {c.n_inputs_a} INPUTS_B {c.n_inputs_b} OUTPUTS {c.n_outputs}"]
    for i in range(c.n_gates):
        op = GateOp(int(c.op[i]))
        if op == GateOp.NOT:
            lines.append(f"GATE NOT {int(c.in_a[i])} {int(c.out[i])}")
        else:
            lines.append(f"GATE {_OP_NAMES[op]} {int(c.in_a[i])} {int(c.in_b[i])} {int(c.out[i])}")
    return "\n".join(lines) + "\n"


def load_circuit(text: str) -> BoolCircuit:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CircuitError("empty circuit file")
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise CircuitError("bad header")
    na, nb, nout = (int(g) for g in m.groups())
    ops, ias, ibs, outs = [], [], [], []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] != "GATE" or parts[1] not in _NAME_OPS:
            raise CircuitError(f"bad gate line: {ln}")
        op = _NAME_OPS[parts[1]]
        if op == GateOp.NOT:
            if len(parts) != 4:
                raise CircuitError(f"bad gate line: {ln}")
            a, o = int(parts[2]), int(parts[3])
            b = -1
        else:
            if len(parts) != 5:
                raise CircuitError(f"bad gate line: {ln}")
            a, b, o = int(parts[2]), int(parts[3]), int(parts[4])
        ops.append(int(op))
        ias.append(a)
        ibs.append(b)
        outs.append(o)
    c = BoolCircuit(
        n_inputs_a=na,
        n_inputs_b=nb,
        n_outputs=nout,
        op=np.asarray(ops, dtype=np.int8),
        in_a=np.asarray(ias, dtype=np.int64),
        in_b=np.asarray(ibs, dtype=np.int64),
        out=np.asarray(outs, dtype=np.int64),
    )
    c.validate()
    return c
