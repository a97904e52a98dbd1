"""Garbled-circuit templates, one set per system configuration.

All templates have fixed topology so garbled instances can be precomputed
and pooled; per-query values enter as input bits. Party A (wire prefix) is
the evaluator (data server), party B the garbler (index server).

Padding convention: bulky state reaches the garbler blinded by uniform
per-exchange pads chosen by the evaluator (the same pad value for every
element of an exchange). Uniform pads commute with selection and with
block moves, so circuits compute directly on padded values; comparisons
against plaintext quantities XOR the pad in via a short evaluator input,
and the evaluator strips pads from decoded outputs locally.

Slot records are rec_bits wide, LSB first: [real flag][block id][leaf label].
Slot order inside a circuit: stash slots first, then path buckets root to
leaf. Eviction positions: 0 = stash, 1..L+1 = buckets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from ..mpc.circuits import CONST0, CONST1, BoolCircuit, CircuitBuilder
from .params import SystemParams


@dataclass
class CircuitTemplate:
    name: str
    circuit: BoolCircuit
    a_segments: Dict[str, range]
    b_segments: Dict[str, range]
    out_segments: Dict[str, range]
    # Which output segments each side learns: the evaluator receives decode
    # bits for its segments; garbler segments come back as raw labels.
    evaluator_segments: Tuple[str, ...] = ()
    returned_to_garbler: Tuple[str, ...] = ()

    @property
    def n_inputs_a(self) -> int:
        return self.circuit.n_inputs_a

    @property
    def n_inputs_b(self) -> int:
        return self.circuit.n_inputs_b


class _SegTracker:
    def __init__(self):
        self.segments: Dict[str, range] = {}
        self._next = 0

    def add(self, name: str, count: int) -> range:
        r = range(self._next, self._next + count)
        self.segments[name] = r
        self._next += count
        return r

    @property
    def total(self) -> int:
        return self._next


def _declare(a_specs: List[Tuple[str, int]], b_specs: List[Tuple[str, int]]):
    a = _SegTracker()
    for name, count in a_specs:
        a.add(name, count)
    b = _SegTracker()
    for name, count in b_specs:
        b.add(name, count)
    return a, b


def _wires(base: int, seg: range) -> List[int]:
    return [base + w for w in seg]


class _SlotFields:
    """Views of the packed per-slot record wires."""

    def __init__(self, wires: Sequence[int], n_slots: int, params: SystemParams):
        self.n_slots = n_slots
        rb = params.rec_bits
        ib = params.id_bits
        lb = params.label_bits
        self.flag: List[int] = []
        self.bid: List[List[int]] = []
        self.label: List[List[int]] = []
        for s in range(n_slots):
            base = s * rb
            self.flag.append(wires[base])
            self.bid.append(list(wires[base + 1 : base + 1 + ib]))
            self.label.append(list(wires[base + 1 + ib : base + 1 + ib + lb]))

    def packed(self, s: int) -> List[int]:
        return [self.flag[s]] + self.bid[s] + self.label[s]


def _sibling_selector(b: CircuitBuilder, i_bits: List[int], level: int, k: int) -> List[int]:
    """Selector bits (LSB first) of the level-`level` sibling index."""
    return [b.bnot(i_bits[level])] + i_bits[level + 1 : k]


def _target_id_bits(
    b: CircuitBuilder, params: SystemParams, kind: str, level: int, i_bits: List[int]
) -> List[int]:
    """Block id of the access target as id_bits LSB-first wires/constants."""
    k = params.merkle_depth
    out: List[int] = []
    if kind == "sib":
        sel = _sibling_selector(b, i_bits, level, k)
        out.extend(sel)
        out.append(CONST1)  # the 2^(K-level) marker bit
        while len(out) < params.id_bits:
            out.append(CONST0)
    else:
        out.extend(i_bits[:k])
        out.append(CONST0)  # bit K
        out.append(CONST1)  # bit K+1: the 2^(K+1) marker
        while len(out) < params.id_bits:
            out.append(CONST0)
    return out[: params.id_bits]


def build_range_check(params: SystemParams) -> CircuitTemplate:
    """Stage-2 range check: combined index below the tree capacity."""
    w = params.index_bits
    a, bseg = _declare([("i1", w)], [("i2", w)])
    b = CircuitBuilder(a.total, bseg.total)
    i1 = _wires(0, a.segments["i1"])
    i2 = _wires(a.total, bseg.segments["i2"])
    i = b.xor_vec(i1, i2)
    allow = b.lt_vec(i, b.const_vec(params.tree_capacity, w))
    circuit = b.finish([allow])
    out = _SegTracker()
    out.add("allow", 1)
    return CircuitTemplate(
        name="range",
        circuit=circuit,
        a_segments=a.segments,
        b_segments=bseg.segments,
        out_segments=out.segments,
        evaluator_segments=("allow",),
        returned_to_garbler=("allow",),
    )


def build_position_fetch(params: SystemParams, kind: str, level: int) -> CircuitTemplate:
    """Stage-3 position lookup plus in-place remap of the posmap segment.

    Inputs (A): i1, r1q (fresh position share XOR the posmap pad q), uid.
    Inputs (B): i2, r2, padded posmap segment, re-share masks, reveal mask.
    Outputs: masked position share (to A), re-masked posmap segment (to A),
    target block id XOR uid (returned to B for the fetch stage).
    """
    k = params.merkle_depth
    lb = params.label_bits
    base_id, width = params.posmap_segment(kind, level)
    a, bseg = _declare(
        [("i1", k), ("r1q", lb), ("uid", params.id_bits)],
        [("i2", k), ("r2", lb), ("wp", width * lb), ("wmask", width * lb), ("m", lb)],
    )
    b = CircuitBuilder(a.total, bseg.total)
    ab = a.total
    i1 = _wires(0, a.segments["i1"])
    r1q = _wires(0, a.segments["r1q"])
    uid = _wires(0, a.segments["uid"])
    i2 = _wires(ab, bseg.segments["i2"])
    r2 = _wires(ab, bseg.segments["r2"])
    wp = _wires(ab, bseg.segments["wp"])
    wmask = _wires(ab, bseg.segments["wmask"])
    m = _wires(ab, bseg.segments["m"])

    i_bits = b.xor_vec(i1, i2)
    sel = _sibling_selector(b, i_bits, level, k) if kind == "sib" else i_bits[:k]
    entries = [wp[e * lb : (e + 1) * lb] for e in range(width)]
    mux_out = b.mux_tree(sel, entries)  # pm[target] xor q
    pos_share = b.xor_vec(mux_out, m)

    new_padded = b.xor_vec(r1q, r2)  # new position xor q
    delta = b.xor_vec(mux_out, new_padded)  # pad-free: old xor new
    hot = b.one_hot(sel)
    new_entries: List[int] = []
    for e in range(width):
        upd = b.xor_vec(entries[e], b.and_bit(hot[e], delta))
        new_entries.extend(b.xor_vec(upd, wmask[e * lb : (e + 1) * lb]))

    tid = _target_id_bits(b, params, kind, level, i_bits)
    tid_masked = b.xor_vec(tid, uid)

    outputs = pos_share + new_entries + tid_masked
    circuit = b.finish(outputs)
    out = _SegTracker()
    out.add("pos_share", lb)
    out.add("posmap", width * lb)
    out.add("tid", params.id_bits)
    return CircuitTemplate(
        name=f"pos_{kind}{level}",
        circuit=circuit,
        a_segments=a.segments,
        b_segments=bseg.segments,
        out_segments=out.segments,
        evaluator_segments=("pos_share", "posmap"),
        returned_to_garbler=("tid",),
    )


def build_fetch(params: SystemParams, kind: str, level: int) -> CircuitTemplate:
    """Stage-4 node fetch: oblivious match over the path+stash slot records,
    payload selection from the heap segment, removal of the matched block,
    and reinsertion (with its fresh label) into the first free stash slot.

    Outputs: payload share (to A), refreshed slot records (to A, re-masked),
    stash-overflow flag (to A, returned to B: fatal on both sides).
    """
    k = params.merkle_depth
    lb = params.label_bits
    ib = params.id_bits
    rb = params.rec_bits
    n_slots = params.slots_per_circuit
    stash = params.stash_capacity
    _, width = params.posmap_segment(kind, level)
    pbits = params.payload_bits(kind)

    a, bseg = _declare(
        [("i1", k), ("uflag", 1), ("r1l", lb)],
        [
            ("i2", k),
            ("tid", ib),  # target id xor uid, decoded by B at stage 3
            ("r2", lb),
            ("wrec", n_slots * rb),
            ("vmask", n_slots * rb),
            ("wheap", width * pbits),
            ("wpay", pbits),
        ],
    )
    b = CircuitBuilder(a.total, bseg.total)
    ab = a.total
    i1 = _wires(0, a.segments["i1"])
    uflag = _wires(0, a.segments["uflag"])[0]
    r1l = _wires(0, a.segments["r1l"])
    i2 = _wires(ab, bseg.segments["i2"])
    tid = _wires(ab, bseg.segments["tid"])
    r2 = _wires(ab, bseg.segments["r2"])
    wrec = _wires(ab, bseg.segments["wrec"])
    vmask = _wires(ab, bseg.segments["vmask"])
    wheap = _wires(ab, bseg.segments["wheap"])
    wpay = _wires(ab, bseg.segments["wpay"])

    slots = _SlotFields(wrec, n_slots, params)

    # Match & removal: padded ids compare directly against the padded target.
    new_flag = list(slots.flag)
    found = CONST0
    for s in range(n_slots):
        flag = b.bxor(slots.flag[s], uflag)
        m_s = b.band(flag, b.eq_vec(slots.bid[s], tid))
        new_flag[s] = b.bxor(new_flag[s], m_s)
        found = b.bor(found, m_s)

    # Reinsert into the first free stash slot (post-removal flags).
    new_bid = [list(x) for x in slots.bid]
    new_label = [list(x) for x in slots.label]
    new_label_value = b.xor_vec(r1l, r2)  # fresh label xor ulabel
    seen_free = CONST0
    any_free = CONST0
    for s in range(stash):
        flag = b.bxor(new_flag[s], uflag)
        free = b.bnot(flag)
        first_free = b.band(free, b.bnot(seen_free))
        seen_free = b.bor(seen_free, free)
        any_free = seen_free
        ins = b.band(first_free, found)
        new_flag[s] = b.bxor(new_flag[s], ins)
        new_bid[s] = b.mux_vec(ins, tid, new_bid[s])
        new_label[s] = b.mux_vec(ins, new_label_value, new_label[s])
    overflow = b.band(found, b.bnot(any_free))

    # Payload from the heap segment, selected by the target's index bits.
    i_bits = b.xor_vec(i1, i2)
    sel = _sibling_selector(b, i_bits, level, k) if kind == "sib" else i_bits[:k]
    cells = [wheap[e * pbits : (e + 1) * pbits] for e in range(width)]
    payload = b.xor_vec(b.mux_tree(sel, cells), wpay)

    out_recs: List[int] = []
    for s in range(n_slots):
        rec = [new_flag[s]] + new_bid[s] + new_label[s]
        out_recs.extend(b.xor_vec(rec, vmask[s * rb : (s + 1) * rb]))

    outputs = payload + out_recs + [overflow]
    circuit = b.finish(outputs)
    out = _SegTracker()
    out.add("payload", pbits)
    out.add("records", n_slots * rb)
    out.add("overflow", 1)
    return CircuitTemplate(
        name=f"fetch_{kind}{level}",
        circuit=circuit,
        a_segments=a.segments,
        b_segments=bseg.segments,
        out_segments=out.segments,
        evaluator_segments=("payload", "records", "overflow"),
        returned_to_garbler=("overflow",),
    )


def build_evict(params: SystemParams) -> CircuitTemplate:
    """Stage-5 single-pass eviction along one path, entirely in-circuit.

    Mirrors the plaintext reference exactly: prepare-deepest and
    prepare-target metadata scans in unary reach encoding, then the
    root-to-leaf pass holding at most one block. The eviction leaf is a
    garbler input (it is public to both servers); slot labels stay padded
    and comparisons use the evaluator's pad bits.
    """
    lb = params.label_bits
    rb = params.rec_bits
    L = params.height
    Z = params.bucket_size
    stash = params.stash_capacity
    n_slots = params.slots_per_circuit
    P = L + 2  # positions: 0 stash, 1..L+1 buckets

    a, bseg = _declare(
        [("uflag", 1), ("ulabel", lb)],
        [("leaf", lb), ("wrec", n_slots * rb), ("vmask", n_slots * rb)],
    )
    b = CircuitBuilder(a.total, bseg.total)
    ab = a.total
    uflag = _wires(0, a.segments["uflag"])[0]
    ulabel = _wires(0, a.segments["ulabel"])
    leaf = _wires(ab, bseg.segments["leaf"])
    wrec = _wires(ab, bseg.segments["wrec"])
    vmask = _wires(ab, bseg.segments["vmask"])

    slots = _SlotFields(wrec, n_slots, params)

    def position_slots(p: int) -> List[int]:
        if p == 0:
            return list(range(stash))
        start = stash + (p - 1) * Z
        return list(range(start, start + Z))

    # Per-slot plain flags and unary reach: reach_ge[s][p] (p in 1..L+1).
    plain_flag = [b.bxor(slots.flag[s], uflag) for s in range(n_slots)]
    reach_ge: List[List[int]] = []
    for s in range(n_slots):
        diff = [b.bxor(b.bxor(slots.label[s][t], ulabel[t]), leaf[t]) for t in range(lb)]
        ge = [CONST0] * (L + 2)  # index p in 1..L+1
        prefix = CONST1
        ge[1] = plain_flag[s]
        for p in range(2, L + 2):
            # reach >= p iff the top p-1 label bits agree with the leaf.
            prefix = b.band(prefix, b.bnot(diff[L - (p - 1)]))
            ge[p] = b.band(plain_flag[s], prefix)
        reach_ge.append(ge)

    # Unary max of reaches per position (OR), for the metadata scans.
    cand_ge: List[List[int]] = []
    for p in range(P):
        agg = [CONST0] * (L + 2)
        for s in position_slots(p):
            for r in range(1, L + 2):
                agg[r] = b.bor(agg[r], reach_ge[s][r])
        cand_ge.append(agg)

    def unary_ge(xs: List[int], ys: List[int]) -> int:
        """x >= y for unary-encoded reaches."""
        bad = CONST0
        for r in range(1, L + 2):
            bad = b.bor(bad, b.band(ys[r], b.bnot(xs[r])))
        return b.bnot(bad)

    # prepare_deepest: running best candidate and its source position.
    goal_ge = list(cand_ge[0])
    src_hot = [CONST0] * P
    src_hot[0] = CONST1  # stash is the initial candidate source (if any)
    deepest_exists: List[int] = [CONST0] * P
    deepest_src: List[List[int]] = [[CONST0] * P for _ in range(P)]
    for p in range(1, P):
        deepest_exists[p] = goal_ge[p]
        deepest_src[p] = [b.band(src_hot[q], goal_ge[p]) for q in range(P)]
        replace = unary_ge(cand_ge[p], goal_ge)
        goal_ge = b.mux_vec(replace, cand_ge[p], goal_ge)
        src_hot = [b.band(src_hot[q], b.bnot(replace)) for q in range(P)]
        src_hot[p] = replace

    # Free-slot indicator per position (pre-pass occupancy).
    has_free = []
    for p in range(P):
        free_any = CONST0
        for s in position_slots(p):
            free_any = b.bor(free_any, b.bnot(plain_flag[s]))
        has_free.append(free_any)

    # prepare_target: leaf-to-root scan arming (source, destination) pairs.
    target_exists = [CONST0] * P
    target_dest: List[List[int]] = [[CONST0] * P for _ in range(P)]
    dest_hot = [CONST0] * P
    src_pending = [CONST0] * P
    for p in range(P - 1, -1, -1):
        arrived = src_pending[p]
        target_exists[p] = arrived
        target_dest[p] = [b.band(arrived, dest_hot[q]) for q in range(P)]
        dest_hot = [b.band(dest_hot[q], b.bnot(arrived)) for q in range(P)]
        src_pending = [b.band(src_pending[q], b.bnot(arrived)) for q in range(P)]
        if p >= 1:
            dest_exists = b.or_tree(dest_hot)
            can_receive = b.band(
                b.bor(b.band(b.bnot(dest_exists), has_free[p]), target_exists[p]),
                deepest_exists[p],
            )
            src_pending = b.mux_vec(can_receive, deepest_src[p], src_pending)
            dest_hot = [b.band(dest_hot[q], b.bnot(can_receive)) for q in range(P)]
            dest_hot[p] = can_receive

    # The pass: root to leaf with one held (padded) record.
    cur_flag = list(slots.flag)
    cur_bid = [list(x) for x in slots.bid]
    cur_label = [list(x) for x in slots.label]
    cur_plain = list(plain_flag)
    hold_rec = [CONST0] * rb
    hold_exists = CONST0
    hold_dest = [CONST0] * P
    for p in range(P):
        writing = b.band(hold_exists, hold_dest[p])
        towrite = list(hold_rec)
        removing = target_exists[p]
        # Pick the deepest legal block at p (lowest slot breaks ties).
        members = position_slots(p)
        best_rec = [cur_flag[members[0]]] + cur_bid[members[0]] + cur_label[members[0]]
        best_ge = list(reach_ge[members[0]])
        pick_hot = [CONST0] * len(members)
        pick_hot[0] = CONST1
        for j, s in enumerate(members[1:], start=1):
            better = CONST0
            for r in range(1, L + 2):
                better = b.bor(better, b.band(reach_ge[s][r], b.bnot(best_ge[r])))
            rec_s = [cur_flag[s]] + cur_bid[s] + cur_label[s]
            best_rec = b.mux_vec(better, rec_s, best_rec)
            best_ge = b.mux_vec(better, reach_ge[s], best_ge)
            pick_hot = [b.band(h, b.bnot(better)) for h in pick_hot]
            pick_hot[j] = better
        for j, s in enumerate(members):
            rm = b.band(removing, pick_hot[j])
            cur_flag[s] = b.bxor(cur_flag[s], rm)  # padded flag flip on removal
            cur_plain[s] = b.band(cur_plain[s], b.bnot(rm))
        hold_rec = b.mux_vec(removing, best_rec, hold_rec)
        hold_exists = b.bor(removing, b.band(hold_exists, b.bnot(writing)))
        hold_dest = b.mux_vec(removing, target_dest[p], [
            b.band(hold_dest[q], b.bnot(writing)) for q in range(P)
        ])
        # Deposit into the first free slot (post-removal occupancy).
        seen = CONST0
        for s in members:
            free = b.bnot(cur_plain[s])
            first_free = b.band(free, b.bnot(seen))
            seen = b.bor(seen, free)
            wr = b.band(first_free, writing)
            rec_s = [cur_flag[s]] + cur_bid[s] + cur_label[s]
            merged = b.mux_vec(wr, towrite, rec_s)
            cur_flag[s] = merged[0]
            cur_bid[s] = merged[1 : 1 + params.id_bits]
            cur_label[s] = merged[1 + params.id_bits :]
            cur_plain[s] = b.bor(cur_plain[s], wr)

    out_recs: List[int] = []
    for s in range(n_slots):
        rec = [cur_flag[s]] + cur_bid[s] + cur_label[s]
        out_recs.extend(b.xor_vec(rec, vmask[s * rb : (s + 1) * rb]))
    circuit = b.finish(out_recs)
    out = _SegTracker()
    out.add("records", n_slots * rb)
    return CircuitTemplate(
        name="evict",
        circuit=circuit,
        a_segments=a.segments,
        b_segments=bseg.segments,
        out_segments=out.segments,
        evaluator_segments=("records",),
    )


class TemplateSet:
    """All circuit templates for one configuration, built once and reused."""

    def __init__(self, params: SystemParams):
        self.params = params
        self.range_check = build_range_check(params)
        self.pos: Dict[Tuple[str, int], CircuitTemplate] = {}
        self.fetch: Dict[Tuple[str, int], CircuitTemplate] = {}
        for kind, level in params.accesses():
            self.pos[(kind, level)] = build_position_fetch(params, kind, level)
            self.fetch[(kind, level)] = build_fetch(params, kind, level)
        self.evict = build_evict(params)
        for tpl in self.all_templates():
            tpl.circuit.validate()
            tpl.circuit.layers()

    def all_templates(self) -> List[CircuitTemplate]:
        return [self.range_check, *self.pos.values(), *self.fetch.values(), self.evict]

    def by_name(self, name: str) -> CircuitTemplate:
        for tpl in self.all_templates():
            if tpl.name == name:
                return tpl
        raise KeyError(name)


_TEMPLATE_CACHE: Dict[SystemParams, TemplateSet] = {}


def get_templates(params: SystemParams) -> TemplateSet:
    if params not in _TEMPLATE_CACHE:
        _TEMPLATE_CACHE[params] = TemplateSet(params)
    return _TEMPLATE_CACHE[params]
