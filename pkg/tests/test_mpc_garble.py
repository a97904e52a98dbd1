"""Garbled circuit correctness against the plaintext evaluator oracle."""

import itertools
import random

import numpy as np
import pytest

from oblivct.rng import RandomSource
from oblivct.mpc.circuits import (
    CONST0,
    CONST1,
    BoolCircuit,
    CircuitBuilder,
    CircuitError,
    GateOp,
    eval_circuit,
    load_circuit,
    save_circuit,
)
from oblivct.mpc.garble import (
    GarbledCircuit,
    GarbledEvaluationError,
    decode_outputs,
    evaluate,
    garble,
)

RNG = RandomSource(b"garble-tests")


def run_garbled(c: BoolCircuit, bits_a, bits_b, corrupt=None):
    gc, keys, _ = garble(c, RNG)
    if corrupt is not None:
        gc.tables = gc.tables.copy()
        flat = gc.tables.reshape(-1)
        flat[corrupt % len(flat)] ^= np.uint64(1 << (corrupt % 64))
    parts = []
    if bits_a:
        parts.append(keys.select_input_labels(0, bits_a))
    if bits_b:
        parts.append(keys.select_input_labels(len(bits_a), bits_b))
    ins = np.vstack(parts)
    out = evaluate(gc, ins)
    return decode_outputs(out, gc.output_decoding)


def comparator_8bit() -> BoolCircuit:
    b = CircuitBuilder(8, 8)
    return b.finish([b.lt_vec(b.inputs_a, b.inputs_b)])


def random_circuit(rng: random.Random, n_gates=64, na=4, nb=4) -> BoolCircuit:
    b = CircuitBuilder(na, nb)
    wires = list(range(na + nb))
    while b._next - na - nb < n_gates:
        op = rng.choice(("and", "xor", "not"))
        x, y = rng.choice(wires), rng.choice(wires)
        if op == "and":
            w = b.band(x, y)
        elif op == "xor":
            w = b.bxor(x, y)
        else:
            w = b.bnot(x)
        if isinstance(w, int) and w >= 0:
            wires.append(w)
    return b.finish(wires[-4:])


class TestGarbleCorrectness:
    def test_single_and_gate_truth_table(self):
        b = CircuitBuilder(1, 1)
        c = b.finish([b.band(0, 1)])
        for xa, xb in itertools.product((0, 1), repeat=2):
            assert run_garbled(c, [xa], [xb]) == [xa & xb]

    def test_single_xor_has_zero_table_rows(self):
        b = CircuitBuilder(1, 1)
        c = b.finish([b.bxor(0, 1)])
        gc, _, _ = garble(c, RNG)
        assert gc.tables.shape[0] == 0
        for xa, xb in itertools.product((0, 1), repeat=2):
            assert run_garbled(c, [xa], [xb]) == [xa ^ xb]

    def test_identity_circuit(self):
        b = CircuitBuilder(1, 0)
        c = b.finish([0])
        for bit in (0, 1):
            assert run_garbled(c, [bit], []) == [bit]

    def test_not_gate(self):
        b = CircuitBuilder(1, 0)
        c = b.finish([b.bnot(0)])
        for bit in (0, 1):
            assert run_garbled(c, [bit], []) == [bit ^ 1]

    def test_random_64_gate_circuits_match_plaintext(self):
        rng = random.Random(42)
        for _ in range(100):
            c = random_circuit(rng)
            xa = [rng.randint(0, 1) for _ in range(4)]
            xb = [rng.randint(0, 1) for _ in range(4)]
            assert run_garbled(c, xa, xb) == eval_circuit(c, xa, xb)

    def test_comparator_boundary_pairs(self):
        c = comparator_8bit()
        gc, keys, _ = garble(c, RNG)
        for x in range(256):
            for y in (x, (x + 1) % 256):
                bits_a = [(x >> i) & 1 for i in range(8)]
                bits_b = [(y >> i) & 1 for i in range(8)]
                ins = np.vstack(
                    [keys.select_input_labels(0, bits_a), keys.select_input_labels(8, bits_b)]
                )
                got = decode_outputs(evaluate(gc, ins), gc.output_decoding)
                assert got == [1 if x < y else 0], (x, y)

    def test_exhaustive_small_circuits(self):
        rng = random.Random(7)
        for _ in range(10):
            c = random_circuit(rng, n_gates=24, na=4, nb=4)
            gc, keys, _ = garble(c, RNG)
            for assignment in range(256):
                xa = [(assignment >> i) & 1 for i in range(4)]
                xb = [(assignment >> (4 + i)) & 1 for i in range(4)]
                ins = np.vstack(
                    [keys.select_input_labels(0, xa), keys.select_input_labels(4, xb)]
                )
                got = decode_outputs(evaluate(gc, ins), gc.output_decoding)
                assert got == eval_circuit(c, xa, xb)


class TestGarbleSecurityStructure:
    def test_corrupted_row_aborts(self):
        b = CircuitBuilder(2, 2)
        x = b.band(0, 2)
        y = b.band(1, 3)
        c = b.finish([b.band(x, y)])
        hits = 0
        for corrupt in range(0, 36):
            try:
                run_garbled(c, [1, 1], [1, 1], corrupt=corrupt)
            except GarbledEvaluationError:
                hits += 1
        # Corrupting the selected row (or a label bit feeding a later gate)
        # must abort, never return a wrong answer silently.
        assert hits > 0
        # Every returned (non-aborted) result must still be correct.
        for corrupt in range(36, 72):
            try:
                got = run_garbled(c, [1, 1], [1, 1], corrupt=corrupt)
                assert got == [1]
            except GarbledEvaluationError:
                pass

    def test_exactly_one_row_authenticates(self):
        from oblivct.mpc.garble import _mmo, _sigma, _ONE

        b = CircuitBuilder(1, 1)
        c = b.finish([b.band(0, 1)])
        gc, keys, _ = garble(c, RNG)
        ins = np.vstack([keys.select_input_labels(0, [1]), keys.select_input_labels(1, [0])])
        a_lab, b_lab = ins[0], ins[1]
        ok_rows = 0
        for r in range(4):
            row = gc.tables[0, r]
            base = (a_lab ^ _sigma(b_lab.reshape(1, 2))[0]).reshape(1, 2).copy()
            kdf = np.vstack([base, base])
            kdf[1, 1] ^= _ONE
            pads = _mmo(kdf)
            tag = row[2] ^ pads[1, 0]
            if tag == 0:
                ok_rows += 1
        assert ok_rows == 1

    def test_invalid_label_aborts(self):
        b = CircuitBuilder(1, 1)
        c = b.finish([b.band(0, 1)])
        gc, keys, _ = garble(c, RNG)
        ins = np.vstack(
            [keys.select_input_labels(0, [1]), keys.select_input_labels(1, [1])]
        ).copy()
        ins[0] ^= np.uint64(0xDEADBEEF)  # not a valid label for wire 0
        with pytest.raises(GarbledEvaluationError):
            evaluate(gc, ins)

    def test_wire_labels_differ(self):
        b = CircuitBuilder(2, 0)
        c = b.finish([b.band(0, 1)])
        _, keys, _ = garble(c, RNG)
        for w in range(2):
            l0, l1 = keys.input_pair(w)
            assert l0 != l1


class TestGarbleApi:
    def test_malformed_circuit_rejected(self):
        c = BoolCircuit(
            n_inputs_a=1,
            n_inputs_b=1,
            n_outputs=1,
            op=np.array([GateOp.AND], dtype=np.int8),
            in_a=np.array([0], dtype=np.int64),
            in_b=np.array([5], dtype=np.int64),  # unwritten wire
            out=np.array([2], dtype=np.int64),
        )
        with pytest.raises(CircuitError):
            garble(c, RNG)

    def test_returned_output_labels_decode_on_garbler_side(self):
        b = CircuitBuilder(2, 0)
        c = b.finish([b.band(0, 1), b.bxor(0, 1)])
        gc, keys, _ = garble(c, RNG)
        ins = keys.select_input_labels(0, [1, 1])
        out_labels = evaluate(gc, ins)
        bits = keys.decode_returned_outputs(out_labels)
        assert list(bits) == [1, 0]

    def test_serialization_roundtrip(self):
        b = CircuitBuilder(2, 2)
        c = b.finish([b.band(b.bxor(0, 2), b.band(1, 3))])
        gc, keys, _ = garble(c, RNG)
        clone = GarbledCircuit.from_tables_bytes(
            c, gc.tables_bytes(), gc.output_decoding.tobytes()
        )
        ins = np.vstack([keys.select_input_labels(0, [1, 0]), keys.select_input_labels(2, [1, 1])])
        assert decode_outputs(evaluate(clone, ins), clone.output_decoding) == eval_circuit(
            c, [1, 0], [1, 1]
        )


class TestBuilderHelpers:
    def test_const_folding(self):
        b = CircuitBuilder(1, 0)
        assert b.band(CONST0, 0) == CONST0
        assert b.band(CONST1, 0) == 0
        assert b.bxor(CONST0, 0) == 0
        assert b.bxor(0, 0) == CONST0
        assert b.bnot(CONST0) == CONST1

    def test_const_output_needs_reserved_wire(self):
        b = CircuitBuilder(1, 0)
        with pytest.raises(CircuitError):
            b.finish([CONST0])
        b2 = CircuitBuilder(1, 0, reserve_const_zero=True)
        c = b2.finish([CONST0, CONST1, 0])
        # B input vector gains the reserved zero wire.
        got = eval_circuit(c, [1], [0])
        assert got == [0, 1, 1]

    def test_one_hot(self):
        b = CircuitBuilder(3, 0)
        c = b.finish(b.one_hot(b.inputs_a))
        for v in range(8):
            bits = [(v >> i) & 1 for i in range(3)]
            got = eval_circuit(c, bits, [])
            assert got == [1 if i == v else 0 for i in range(8)]

    def test_lt_vec_exhaustive(self):
        b = CircuitBuilder(4, 4)
        c = b.finish([b.lt_vec(b.inputs_a, b.inputs_b)])
        for x in range(16):
            for y in range(16):
                xa = [(x >> i) & 1 for i in range(4)]
                xb = [(y >> i) & 1 for i in range(4)]
                assert eval_circuit(c, xa, xb) == [1 if x < y else 0]

    def test_mux_tree(self):
        b = CircuitBuilder(3, 16)
        entries = [b.inputs_b[2 * i : 2 * i + 2] for i in range(8)]
        c = b.finish(b.mux_tree(b.inputs_a, entries))
        data = [RNG.bit() for _ in range(16)]
        for idx in range(8):
            sel = [(idx >> i) & 1 for i in range(3)]
            assert eval_circuit(c, sel, data) == data[2 * idx : 2 * idx + 2]

    def test_eq_and_or_tree(self):
        b = CircuitBuilder(4, 4)
        c = b.finish([b.eq_vec(b.inputs_a, b.inputs_b), b.or_tree(b.inputs_a)])
        assert eval_circuit(c, [1, 0, 1, 0], [1, 0, 1, 0]) == [1, 1]
        assert eval_circuit(c, [0, 0, 0, 0], [1, 0, 1, 0]) == [0, 0]


class TestCircuitFile:
    def test_roundtrip(self):
        b = CircuitBuilder(2, 1)
        c = b.finish([b.band(b.bxor(0, 1), b.bnot(2))])
        text = save_circuit(c)
        assert text.startswith("INPUTS_A 2 INPUTS_B 1 OUTPUTS 1")
        c2 = load_circuit(text)
        for xa0, xa1, xb in itertools.product((0, 1), repeat=3):
            assert eval_circuit(c2, [xa0, xa1], [xb]) == eval_circuit(c, [xa0, xa1], [xb])

    def test_bad_header(self):
        with pytest.raises(CircuitError):
            load_circuit("NOT A HEADER\n")

    def test_bad_gate_line(self):
        with pytest.raises(CircuitError):
            load_circuit("INPUTS_A 1 INPUTS_B 1 OUTPUTS 1\nGATE NAND 0 1 2\n")
