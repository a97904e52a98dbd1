"""The two-server 2PC executor: stages 2-6 of the query protocol.

The data server (evaluator) drives a batch; the index server (garbler)
mirrors the same deterministic script, so apart from the initial batch
sync no message needs dispatch headers. Per access the script is:

    1. data -> index   padded posmap segment                (PADDED_STATE)
    2. index -> data   garbled position circuit + inputs    (GC_*)
    3. OT              evaluator input labels               (OT_ROUND)
    4. data -> index   returned labels: masked target id    (GC_OUTPUT_RETURN)
    5. index -> data   position reveal mask                 (MASK_REVEAL)
    6. data -> index   padded slot records + heap segment   (PADDED_STATE)
    7-9.               garbled fetch circuit round          (GC_*, OT, return)
    10-15.             two garbled eviction rounds          (PADDED_STATE, GC_*, OT)

State refresh: circuit outputs hand the data server fresh masked slot
records (its new share view); the index server's new share is the mask it
fed the circuit. Committing a batch (stage 6) just installs both views
into the persistent share arrays, which is the mask-and-apply split: the
data server applies masked updates, the index server keeps the masks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..mpc.circuits import BoolCircuit
from ..mpc.garble import (
    GarbledCircuit,
    GarblingKeys,
    evaluate,
    garble,
    labels_from_bytes,
    labels_to_bytes,
)
from ..mpc.ot import DhGroup, OtMessage, OtReceiver, OtRound, OtSender, RandomOtReceiver, RandomOtSender
from ..mpc.pool import PrecomputePool
from ..oram.shares import ShareOramState
from ..rng import RandomSource
from .params import SystemParams
from .templates import CircuitTemplate, TemplateSet, get_templates
from .wire import FramedChannel, MsgType, WireError

LABEL_LEN = 16


class EngineError(Exception):
    pass


class StashOverflowAbort(EngineError):
    pass


def int_to_bits(value: int, width: int) -> List[int]:
    return [(value >> i) & 1 for i in range(width)]


def bits_to_int(bits: Sequence[int]) -> int:
    v = 0
    for i, b in enumerate(bits):
        v |= (int(b) & 1) << i
    return v


def _bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def _bytes_to_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[:n]


@dataclass
class SessionJob:
    """One query as the executor sees it."""

    query_id: bytes
    commitment: bytes
    index_share: int  # this server's 16-bit share
    allowed: Optional[bool] = None
    response_share: Optional[bytes] = None
    failed: bool = False


def pack_record(flag: int, bid: int, label: int, params: SystemParams) -> int:
    return (flag & 1) | (bid << 1) | (label << (1 + params.id_bits))


def unpack_record(rec: int, params: SystemParams) -> Tuple[int, int, int]:
    flag = rec & 1
    bid = (rec >> 1) & ((1 << params.id_bits) - 1)
    label = (rec >> (1 + params.id_bits)) & ((1 << params.label_bits) - 1)
    return flag, bid, label


class _OtEndpoint:
    """Batched oblivious transfers over the shared channel.

    Pool kind "otcorr" holds precomputed random OTs (derandomized online);
    an empty pool falls back to inline two-round DH OTs, drawing (scalar,
    element) pairs from the "exp" pool when available.
    """

    def __init__(
        self,
        channel: FramedChannel,
        group: DhGroup,
        rng: RandomSource,
        pool: PrecomputePool,
        is_sender: bool,
    ):
        self.channel = channel
        self.group = group
        self.rng = rng
        self.pool = pool
        self.is_sender = is_sender
        self.static_sender: Optional[OtSender] = None
        self.static_setup: Optional[OtMessage] = None

    # -- handshake --

    def sender_setup(self) -> bytes:
        self.static_sender = OtSender(self.group, self.rng, pair=self._exp_pair())
        return self.static_sender.setup_message().payload

    def receiver_accept(self, payload: bytes) -> None:
        self.static_setup = OtMessage(OtRound.SENDER_SETUP, payload)

    def _exp_pair(self) -> Optional[Tuple[int, int]]:
        if self.pool.size("exp") > 0:
            return self.pool.take("exp").value
        return None

    # -- receiver side (evaluator wants labels for its bits) --

    def receive_labels(self, bits: Sequence[int]) -> np.ndarray:
        n = len(bits)
        if n == 0:
            self.channel.send(MsgType.OT_ROUND, b"\x00" + struct.pack(">I", 0))
            self.channel.expect(MsgType.OT_ROUND)
            return np.zeros((0, 2), dtype=np.uint64)
        pooled = self.pool.take_many("otcorr", n) if self.pool.size("otcorr") >= n else None
        if pooled is not None:
            recs: List[RandomOtReceiver] = [it.value for it in pooled]
            flips = bytes((recs[i].flip(bits[i]) for i in range(n)))
            self.channel.send(MsgType.OT_ROUND, b"\x01" + struct.pack(">I", n) + flips)
            resp = self.channel.expect(MsgType.OT_ROUND)
            out = np.empty((n, 2), dtype=np.uint64)
            for i in range(n):
                body = resp[i * 32 : (i + 1) * 32]
                out[i] = labels_from_bytes(recs[i].recover(bits[i], body))[0]
            return out
        # Inline DH OTs.
        receivers = []
        payload = bytearray(b"\x02" + struct.pack(">I", n))
        for i in range(n):
            r = OtReceiver(self.group, self.rng, int(bits[i]), pair=self._exp_pair())
            receivers.append(r)
            payload += r.choice_message(self.static_setup).payload
        self.channel.send(MsgType.OT_ROUND, bytes(payload))
        resp = self.channel.expect(MsgType.OT_ROUND)
        out = np.empty((n, 2), dtype=np.uint64)
        step = 4 + 2 * LABEL_LEN
        for i in range(n):
            body = resp[i * step : (i + 1) * step]
            msg = OtMessage(OtRound.SENDER_TRANSFER, body)
            out[i] = labels_from_bytes(receivers[i].receive(msg))[0]
        return out

    # -- sender side (garbler serves label pairs) --

    def send_labels(self, keys: GarblingKeys, first_wire: int, n: int) -> None:
        req = self.channel.expect(MsgType.OT_ROUND)
        mode = req[0]
        count = struct.unpack(">I", req[1:5])[0]
        if count != n:
            raise EngineError(f"OT count mismatch: expected {n}, got {count}")
        if n == 0:
            self.channel.send(MsgType.OT_ROUND, b"")
            return
        zeros = keys.input_labels0[first_wire : first_wire + n]
        ones = zeros ^ keys.delta
        if mode == 1:
            pooled = self.pool.take_many("otcorr", n)
            flips = req[5 : 5 + n]
            out = bytearray()
            for i in range(n):
                rec: RandomOtSender = pooled[i].value
                out += rec.respond(
                    flips[i], labels_to_bytes(zeros[i]), labels_to_bytes(ones[i])
                )
            self.channel.send(MsgType.OT_ROUND, bytes(out))
        elif mode == 2:
            elen = self.group.element_len
            out = bytearray()
            for i in range(n):
                b_elem = req[5 + i * elen : 5 + (i + 1) * elen]
                msg = OtMessage(OtRound.RECEIVER_CHOICE, b_elem)
                t = self.static_sender.transfer(
                    msg, labels_to_bytes(zeros[i]), labels_to_bytes(ones[i])
                )
                out += t.payload
            self.channel.send(MsgType.OT_ROUND, bytes(out))
        else:
            raise EngineError(f"unknown OT mode {mode}")

    # -- joint pool filling (precomputed random OTs) --

    def fill_correlations_receiver(self, count: int) -> None:
        """Run `count` base OTs on random inputs; store receiver halves."""
        payload = bytearray(struct.pack(">I", count))
        receivers = []
        choices = []
        for _ in range(count):
            c = self.rng.bit()
            r = OtReceiver(self.group, self.rng, c, pair=self._exp_pair())
            receivers.append(r)
            choices.append(c)
            payload += r.choice_message(self.static_setup).payload
        self.channel.send(MsgType.POOL_FILL, bytes(payload))
        resp = self.channel.expect(MsgType.POOL_FILL)
        step = 4 + 2 * LABEL_LEN
        values = []
        for i in range(count):
            msg = OtMessage(OtRound.SENDER_TRANSFER, resp[i * step : (i + 1) * step])
            pad = receivers[i].receive(msg)
            values.append(RandomOtReceiver(choice=choices[i], pad=pad))
        self.pool.put("otcorr", values)

    def fill_correlations_sender(self, req: bytes) -> int:
        count = struct.unpack(">I", req[:4])[0]
        elen = self.group.element_len
        out = bytearray()
        values = []
        for i in range(count):
            pad0 = self.rng.bytes(LABEL_LEN)
            pad1 = self.rng.bytes(LABEL_LEN)
            msg = OtMessage(
                OtRound.RECEIVER_CHOICE, req[4 + i * elen : 4 + (i + 1) * elen]
            )
            out += self.static_sender.transfer(msg, pad0, pad1).payload
            values.append(RandomOtSender(pad0=pad0, pad1=pad1))
        self.channel.send(MsgType.POOL_FILL, bytes(out))
        self.pool.put("otcorr", values)
        return count


# ---------------------------------------------------------------------------


class _EngineBase:
    def __init__(
        self,
        params: SystemParams,
        state: ShareOramState,
        channel: FramedChannel,
        rng: RandomSource,
        pool: Optional[PrecomputePool] = None,
        group: Optional[DhGroup] = None,
    ):
        self.params = params
        self.state = state
        self.channel = channel
        self.rng = rng
        self.group = group or DhGroup()
        self.pool = pool or PrecomputePool()
        if "exp" not in self.pool.kinds():
            self.pool.register("exp", lambda n: [self.group.fresh_pair(self.rng) for _ in range(n)])
        self.templates: TemplateSet = get_templates(params)
        self.evict_counter = 0
        self._tree_geometry()

    def _tree_geometry(self):
        cfg = self.params.oram_config
        self.height = cfg.height
        self.num_leaves = cfg.num_leaves
        self.num_buckets = cfg.num_buckets
        self.stash_base = self.num_buckets * cfg.bucket_size

    def path_buckets(self, leaf: int) -> List[int]:
        return [(1 << l) - 1 + (leaf >> (self.height - l)) for l in range(self.height + 1)]

    def circuit_locators(self, leaf: int) -> List[int]:
        """Slot locators in template order: stash first, then path buckets."""
        z = self.params.bucket_size
        locs = [self.stash_base + i for i in range(self.params.stash_capacity)]
        for b in self.path_buckets(leaf):
            locs.extend(range(b * z, (b + 1) * z))
        return locs

    def scheduled_leaf(self) -> int:
        from ..oram.core import bit_reverse

        leaf = bit_reverse(self.evict_counter % self.num_leaves, self.height)
        self.evict_counter += 1
        return leaf

    def abort(self, reason: str) -> None:
        try:
            self.channel.send(MsgType.SESSION_ABORT, reason.encode()[:200])
        except WireError:
            pass


class DataServerEngine(_EngineBase):
    """Evaluator side (server 1): holds slot/heap/posmap share halves."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.ot = _OtEndpoint(self.channel, self.group, self.rng.child("ot"), self.pool, False)
        self.observed_fetch_leaves: List[int] = []
        self.observed_evict_leaves: List[int] = []
        self.fetch_bucket_reads = 0

    def handshake(self) -> None:
        self.channel.send(MsgType.HANDSHAKE, self.params.digest())
        peer = self.channel.expect(MsgType.HANDSHAKE)
        if peer[:32] != self.params.digest():
            raise EngineError("parameter digest mismatch with peer")
        self.ot.receiver_accept(peer[32:])

    def warm_ot_pool(self, count: int) -> None:
        self.ot.fill_correlations_receiver(count)

    # -- batch protocol --

    def run_batch(self, jobs: List[SessionJob]) -> None:
        sync = struct.pack(">I", len(jobs)) + b"".join(j.commitment for j in jobs)
        self.channel.send(MsgType.BATCH_EPOCH_SYNC, sync)
        view_rec: Dict[int, int] = {}
        view_pm: Dict[int, int] = {}
        try:
            for job in jobs:
                job.allowed = self._stage2_range(job)
            for job in jobs:
                if job.allowed:
                    self._run_accesses(job, view_rec, view_pm)
            self._commit(view_rec, view_pm)
        except EngineError:
            raise

    def _stage2_range(self, job: SessionJob) -> bool:
        tpl = self.templates.range_check
        a_bits = int_to_bits(job.index_share, self.params.index_bits)
        out = self._evaluate(tpl, a_bits, return_segments=("allow",))
        return bool(out["allow"][0])

    def _run_accesses(self, job: SessionJob, view_rec: Dict[int, int], view_pm: Dict[int, int]):
        p = self.params
        parts: Dict[str, bytes] = {}
        for kind, level in p.accesses():
            payload_share = self._one_access(job, kind, level, view_rec, view_pm)
            parts[f"{kind}{level}"] = payload_share
        response = parts["rec0"] + b"".join(
            parts[f"sib{d}"] for d in range(p.merkle_depth)
        )
        job.response_share = response

    def _one_access(
        self,
        job: SessionJob,
        kind: str,
        level: int,
        view_rec: Dict[int, int],
        view_pm: Dict[int, int],
    ) -> bytes:
        p = self.params
        lb = p.label_bits
        base_id, width = p.posmap_segment(kind, level)

        # Stage 3: position fetch via garbled mux over the shared posmap.
        q = self.rng.randbelow(1 << lb)
        uid = self.rng.randbelow(1 << p.id_bits)
        r1 = self.rng.randbelow(self.num_leaves)
        seg = np.empty(width, dtype="<u2")
        for e in range(width):
            cur = view_pm.get(base_id + e)
            if cur is None:
                cur = int(self.state.posmap[base_id + e])
            seg[e] = cur ^ q
        self.channel.send(MsgType.PADDED_STATE, seg.tobytes())

        tpl = self.templates.pos[(kind, level)]
        a_bits = (
            int_to_bits(job.index_share & ((1 << p.merkle_depth) - 1), p.merkle_depth)
            + int_to_bits(r1 ^ q, lb)
            + int_to_bits(uid, p.id_bits)
        )
        out = self._evaluate(tpl, a_bits, return_segments=("pos_share", "posmap"))
        pos_share = bits_to_int(out["pos_share"]) ^ q  # position xor reveal-mask
        pm_bits = out["posmap"]
        for e in range(width):
            val = bits_to_int(pm_bits[e * lb : (e + 1) * lb]) ^ q
            view_pm[base_id + e] = val

        # Stage 4: reveal, read the path, run the fetch circuit.
        m = bits_to_int(
            _bytes_to_bits(self.channel.expect(MsgType.MASK_REVEAL), lb).tolist()
        )
        leaf = pos_share ^ m
        self.observed_fetch_leaves.append(leaf)
        self.fetch_bucket_reads += self.height + 1

        urec = self.rng.randbelow(1 << p.rec_bits)
        uflag = urec & 1
        ulabel = (urec >> (1 + p.id_bits)) & ((1 << lb) - 1)
        locators = self.circuit_locators(leaf)
        recs = np.empty(len(locators), dtype="<u4")
        for idx, loc in enumerate(locators):
            recs[idx] = self._slot_view(loc, view_rec) ^ urec
        pbits = p.payload_bits(kind)
        pbytes = pbits // 8
        uh = self.rng.bytes(pbytes)
        uh_arr = np.frombuffer(uh, dtype=np.uint8)
        cells = np.empty((width, pbytes), dtype=np.uint8)
        for e in range(width):
            cells[e] = self.state.heap[base_id + e, :pbytes] ^ uh_arr
        self.channel.send(
            MsgType.PADDED_STATE,
            struct.pack(">I", leaf) + recs.tobytes() + cells.tobytes(),
        )

        tpl = self.templates.fetch[(kind, level)]
        a_bits = (
            int_to_bits(job.index_share & ((1 << p.merkle_depth) - 1), p.merkle_depth)
            + [uflag]
            + int_to_bits(r1 ^ ulabel, lb)
        )
        out = self._evaluate(tpl, a_bits, return_segments=("payload", "records", "overflow"))
        if out["overflow"][0]:
            raise StashOverflowAbort("stash overflow inside fetch circuit")
        payload_share = bytes(
            np.packbits(np.asarray(out["payload"], dtype=np.uint8), bitorder="little")
            ^ uh_arr
        )
        self._absorb_records(out["records"], locators, urec, view_rec)

        # Stage 5: two single-pass evictions (access path, then scheduled).
        for evict_leaf in (leaf, self.scheduled_leaf()):
            self.observed_evict_leaves.append(evict_leaf)
            self._one_evict(evict_leaf, view_rec)
        return payload_share

    def _one_evict(self, leaf: int, view_rec: Dict[int, int]) -> None:
        p = self.params
        urec = self.rng.randbelow(1 << p.rec_bits)
        uflag = urec & 1
        ulabel = (urec >> (1 + p.id_bits)) & ((1 << p.label_bits) - 1)
        locators = self.circuit_locators(leaf)
        recs = np.empty(len(locators), dtype="<u4")
        for idx, loc in enumerate(locators):
            recs[idx] = self._slot_view(loc, view_rec) ^ urec
        self.channel.send(MsgType.PADDED_STATE, struct.pack(">I", leaf) + recs.tobytes())
        tpl = self.templates.evict
        a_bits = [uflag] + int_to_bits(ulabel, p.label_bits)
        out = self._evaluate(tpl, a_bits, return_segments=("records",))
        self._absorb_records(out["records"], locators, urec, view_rec)

    def _slot_view(self, loc: int, view_rec: Dict[int, int]) -> int:
        cur = view_rec.get(loc)
        if cur is not None:
            return cur
        flag = int(self.state.slot_flags[loc]) & 1
        bid = int(self.state.slot_ids[loc])
        label = int(self.state.slot_labels[loc])
        return pack_record(flag, bid, label, self.params)

    def _absorb_records(
        self, bits: List[int], locators: List[int], urec: int, view_rec: Dict[int, int]
    ) -> None:
        rb = self.params.rec_bits
        for idx, loc in enumerate(locators):
            val = bits_to_int(bits[idx * rb : (idx + 1) * rb]) ^ urec
            view_rec[loc] = val

    def _commit(self, view_rec: Dict[int, int], view_pm: Dict[int, int]) -> None:
        p = self.params
        for loc, rec in view_rec.items():
            flag, bid, label = unpack_record(rec, p)
            self.state.slot_flags[loc] = flag
            self.state.slot_ids[loc] = bid
            self.state.slot_labels[loc] = label
        for e, val in view_pm.items():
            self.state.posmap[e] = val
        self.channel.send(MsgType.BATCH_COMMIT, struct.pack(">Q", self.evict_counter))
        ack = self.channel.expect(MsgType.BATCH_COMMIT)
        if struct.unpack(">Q", ack)[0] != self.evict_counter:
            raise EngineError("eviction counters diverged at commit")

    # -- garbled circuit round (evaluator side) --

    def _evaluate(
        self, tpl: CircuitTemplate, a_bits: Sequence[int], return_segments: Tuple[str, ...]
    ) -> Dict[str, List[int]]:
        payload = self.channel.expect(MsgType.GC_INSTANCE)
        tables_len = tpl.circuit.n_and * 4 * 24
        gc = GarbledCircuit.from_tables_bytes(tpl.circuit, payload[:tables_len], b"")
        decode_blob = payload[tables_len:]
        glabels = labels_from_bytes(self.channel.expect(MsgType.GC_GARBLER_INPUTS))
        if len(glabels) != tpl.n_inputs_b:
            raise EngineError("garbler label count mismatch")
        alabels = self.ot.receive_labels(list(a_bits))
        inputs = np.vstack([alabels, glabels]) if len(alabels) else glabels
        labels = evaluate(gc, inputs, tpl.circuit.layers())

        # Decode bits cover exactly the evaluator's segments, in order.
        out: Dict[str, List[int]] = {}
        off = 0
        returned = bytearray()
        for name, seg in tpl.out_segments.items():
            seg_labels = labels[seg.start : seg.stop]
            if name in tpl.returned_to_garbler:
                returned += labels_to_bytes(seg_labels)
            if name in tpl.evaluator_segments:
                dec = _bytes_to_bits(decode_blob[off:], len(seg))
                off += (len(seg) + 7) // 8
                if name in return_segments:
                    colors = ((seg_labels[:, 1] >> np.uint64(56)) & np.uint64(1)).astype(
                        np.uint8
                    )
                    out[name] = [int(v) for v in (colors ^ dec)]
        self.channel.send(MsgType.GC_OUTPUT_RETURN, bytes(returned))
        return out


class IndexServerEngine(_EngineBase):
    """Garbler side (server 2): mirrors the script, serves garbled instances."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.ot = _OtEndpoint(self.channel, self.group, self.rng.child("ot"), self.pool, True)
        self._register_circuit_pools()
        self.observed_leaves: List[int] = []

    def _register_circuit_pools(self) -> None:
        for tpl in self.templates.all_templates():
            name = tpl.name
            self.pool.register(
                f"circuit:{name}",
                lambda n, _tpl=tpl: [
                    garble(_tpl.circuit, self.rng.child(f"garble-{_tpl.name}"), _tpl.circuit.layers())
                    for _ in range(n)
                ],
            )

    def handshake(self) -> None:
        peer = self.channel.expect(MsgType.HANDSHAKE)
        if peer != self.params.digest():
            self.channel.send(MsgType.HANDSHAKE, b"\x00" * 32)
            raise EngineError("parameter digest mismatch with peer")
        setup = self.ot.sender_setup()
        self.channel.send(MsgType.HANDSHAKE, self.params.digest() + setup)

    def serve_pool_fill(self, payload: bytes) -> None:
        self.ot.fill_correlations_sender(payload)

    # -- batch protocol (mirror) --

    def read_batch_sync(self) -> List[bytes]:
        payload = self.channel.expect(MsgType.BATCH_EPOCH_SYNC)
        (count,) = struct.unpack(">I", payload[:4])
        commitments = [payload[4 + i * 32 : 4 + (i + 1) * 32] for i in range(count)]
        return commitments

    def run_batch(self, jobs: List[SessionJob]) -> None:
        view_v2_rec: Dict[int, int] = {}
        view_v2_pm: Dict[int, int] = {}
        for job in jobs:
            job.allowed = self._stage2_range(job)
        for job in jobs:
            if job.allowed:
                self._run_accesses(job, view_v2_rec, view_v2_pm)
        self._commit(view_v2_rec, view_v2_pm)

    def _stage2_range(self, job: SessionJob) -> bool:
        tpl = self.templates.range_check
        b_bits = int_to_bits(job.index_share, self.params.index_bits)
        keys = self._issue_instance(tpl, b_bits, decode_for=("allow",))
        self.ot.send_labels(keys, 0, tpl.n_inputs_a)
        returned = self.channel.expect(MsgType.GC_OUTPUT_RETURN)
        bits = self._decode_returned(tpl, keys, returned, "allow")
        return bool(bits[0])

    def _run_accesses(self, job: SessionJob, v2_rec: Dict[int, int], v2_pm: Dict[int, int]):
        p = self.params
        parts: Dict[str, bytes] = {}
        for kind, level in p.accesses():
            parts[f"{kind}{level}"] = self._one_access(job, kind, level, v2_rec, v2_pm)
        job.response_share = parts["rec0"] + b"".join(
            parts[f"sib{d}"] for d in range(p.merkle_depth)
        )

    def _one_access(
        self, job: SessionJob, kind: str, level: int, v2_rec: Dict[int, int], v2_pm: Dict[int, int]
    ) -> bytes:
        p = self.params
        lb = p.label_bits
        base_id, width = p.posmap_segment(kind, level)

        # Stage 3.
        seg = np.frombuffer(self.channel.expect(MsgType.PADDED_STATE), dtype="<u2")
        if len(seg) != width:
            raise EngineError("posmap segment width mismatch")
        wp_bits: List[int] = []
        for e in range(width):
            share2 = v2_pm.get(base_id + e)
            if share2 is None:
                share2 = int(self.state.posmap[base_id + e])
            wp_bits.extend(int_to_bits(int(seg[e]) ^ share2, lb))
        r2 = self.rng.randbelow(self.num_leaves)
        m = self.rng.randbelow(1 << lb)
        wmask = [self.rng.randbelow(1 << lb) for _ in range(width)]
        for e in range(width):
            v2_pm[base_id + e] = wmask[e]
        tpl = self.templates.pos[(kind, level)]
        b_bits = (
            int_to_bits(job.index_share & ((1 << p.merkle_depth) - 1), p.merkle_depth)
            + int_to_bits(r2, lb)
            + wp_bits
            + [b for w in wmask for b in int_to_bits(w, lb)]
            + int_to_bits(m, lb)
        )
        keys = self._issue_instance(tpl, b_bits, decode_for=("pos_share", "posmap"))
        self.ot.send_labels(keys, 0, tpl.n_inputs_a)
        returned = self.channel.expect(MsgType.GC_OUTPUT_RETURN)
        tid_masked = bits_to_int(self._decode_returned(tpl, keys, returned, "tid"))
        self.channel.send(
            MsgType.MASK_REVEAL, _bits_to_bytes(np.asarray(int_to_bits(m, lb)))
        )

        # Stage 4.
        payload = self.channel.expect(MsgType.PADDED_STATE)
        (leaf,) = struct.unpack(">I", payload[:4])
        self.observed_leaves.append(leaf)
        locators = self.circuit_locators(leaf)
        n_slots = len(locators)
        recs = np.frombuffer(payload, dtype="<u4", count=n_slots, offset=4)
        pbits = p.payload_bits(kind)
        pbytes = pbits // 8
        cells = np.frombuffer(
            payload, dtype=np.uint8, count=width * pbytes, offset=4 + 4 * n_slots
        ).reshape(width, pbytes)
        wrec_bits: List[int] = []
        for idx, loc in enumerate(locators):
            share2 = self._slot_share(loc, v2_rec)
            wrec_bits.extend(int_to_bits(int(recs[idx]) ^ share2, p.rec_bits))
        wheap = cells ^ self.state.heap[base_id : base_id + width, :pbytes]
        wheap_bits = np.unpackbits(wheap, bitorder="little").tolist()
        vmask = [self.rng.randbelow(1 << p.rec_bits) for _ in range(n_slots)]
        wpay = self.rng.bytes(pbytes)
        tpl = self.templates.fetch[(kind, level)]
        b_bits = (
            int_to_bits(job.index_share & ((1 << p.merkle_depth) - 1), p.merkle_depth)
            + int_to_bits(tid_masked, p.id_bits)
            + int_to_bits(r2, lb)
            + wrec_bits
            + [b for v in vmask for b in int_to_bits(v, p.rec_bits)]
            + wheap_bits
            + np.unpackbits(np.frombuffer(wpay, dtype=np.uint8), bitorder="little").tolist()
        )
        keys = self._issue_instance(tpl, b_bits, decode_for=("payload", "records", "overflow"))
        self.ot.send_labels(keys, 0, tpl.n_inputs_a)
        returned = self.channel.expect(MsgType.GC_OUTPUT_RETURN)
        overflow = self._decode_returned(tpl, keys, returned, "overflow")
        if overflow[0]:
            raise StashOverflowAbort("stash overflow inside fetch circuit")
        for idx, loc in enumerate(locators):
            v2_rec[loc] = vmask[idx]

        # Stage 5: evictions.
        for evict_leaf_expected in (leaf, self.scheduled_leaf()):
            self._one_evict(evict_leaf_expected, v2_rec)
        return wpay

    def _one_evict(self, expected_leaf: int, v2_rec: Dict[int, int]) -> None:
        p = self.params
        payload = self.channel.expect(MsgType.PADDED_STATE)
        (leaf,) = struct.unpack(">I", payload[:4])
        if leaf != expected_leaf:
            raise EngineError(f"eviction leaf mismatch: {leaf} != {expected_leaf}")
        locators = self.circuit_locators(leaf)
        recs = np.frombuffer(payload, dtype="<u4", count=len(locators), offset=4)
        wrec_bits: List[int] = []
        for idx, loc in enumerate(locators):
            share2 = self._slot_share(loc, v2_rec)
            wrec_bits.extend(int_to_bits(int(recs[idx]) ^ share2, p.rec_bits))
        vmask = [self.rng.randbelow(1 << p.rec_bits) for _ in range(len(locators))]
        tpl = self.templates.evict
        b_bits = (
            int_to_bits(leaf, p.label_bits)
            + wrec_bits
            + [b for v in vmask for b in int_to_bits(v, p.rec_bits)]
        )
        keys = self._issue_instance(tpl, b_bits, decode_for=("records",))
        self.ot.send_labels(keys, 0, tpl.n_inputs_a)
        self.channel.expect(MsgType.GC_OUTPUT_RETURN)
        for idx, loc in enumerate(locators):
            v2_rec[loc] = vmask[idx]

    def _slot_share(self, loc: int, v2_rec: Dict[int, int]) -> int:
        cur = v2_rec.get(loc)
        if cur is not None:
            return cur
        return pack_record(
            int(self.state.slot_flags[loc]) & 1,
            int(self.state.slot_ids[loc]),
            int(self.state.slot_labels[loc]),
            self.params,
        )

    def _commit(self, v2_rec: Dict[int, int], v2_pm: Dict[int, int]) -> None:
        p = self.params
        for loc, rec in v2_rec.items():
            flag, bid, label = unpack_record(rec, p)
            self.state.slot_flags[loc] = flag
            self.state.slot_ids[loc] = bid
            self.state.slot_labels[loc] = label
        for e, val in v2_pm.items():
            self.state.posmap[e] = val
        counter = struct.unpack(">Q", self.channel.expect(MsgType.BATCH_COMMIT))[0]
        if counter != self.evict_counter:
            raise EngineError("eviction counters diverged at commit")
        self.channel.send(MsgType.BATCH_COMMIT, struct.pack(">Q", self.evict_counter))

    # -- garbled circuit round (garbler side) --

    def _issue_instance(
        self, tpl: CircuitTemplate, b_bits: Sequence[int], decode_for: Tuple[str, ...]
    ) -> GarblingKeys:
        item = self.pool.take(f"circuit:{tpl.name}")
        gc, keys, _ = item.value
        decode_blob = bytearray()
        for name, seg in tpl.out_segments.items():
            if DataServerEngine._decoded_for_evaluator(tpl, name):
                decode_blob += _bits_to_bytes(gc.output_decoding[seg.start : seg.stop])
        self.channel.send(MsgType.GC_INSTANCE, gc.tables_bytes() + bytes(decode_blob))
        if len(b_bits) != tpl.n_inputs_b:
            raise EngineError(
                f"{tpl.name}: expected {tpl.n_inputs_b} garbler bits, got {len(b_bits)}"
            )
        labels = keys.select_input_labels(tpl.n_inputs_a, list(b_bits))
        self.channel.send(MsgType.GC_GARBLER_INPUTS, labels_to_bytes(labels))
        return keys

    def _decode_returned(
        self, tpl: CircuitTemplate, keys: GarblingKeys, returned: bytes, segment: str
    ) -> List[int]:
        labels = labels_from_bytes(returned)
        off = 0
        for name, seg in tpl.out_segments.items():
            if name not in tpl.returned_to_garbler:
                continue
            if name == segment:
                span = labels[off : off + len(seg)]
                bits = keys.decode_returned_outputs(span, first=seg.start)
                return [int(b) for b in bits]
            off += len(seg)
        raise EngineError(f"segment {segment} not in returned outputs")
