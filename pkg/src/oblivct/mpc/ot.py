"""1-of-2 oblivious transfer, semi-honest, over a prime-order group.

Two-round Diffie-Hellman shape: the sender publishes a group element A,
the receiver answers with a blinded choice element B = g^b * A^choice, and
the sender derives the two message keys from B^a and (B/A)^a. The receiver
can compute exactly one of them (A^b). Both of the receiver's possible
messages are uniform group elements, so the sender's transcript view is
independent of the choice bit.

The group is the quadratic-residue subgroup of a fixed 512-bit safe prime
(desk-scale default; the modulus is configurable upward). Exponentiations
of the generator are the poolable cost: (scalar, g^scalar) pairs come from
the precompute pool when one is supplied.

Whole OTs can also be run ahead of time on random inputs and derandomized
at use (RandomOtSender/RandomOtReceiver): online consumption is then two
short XOR-messages with no group arithmetic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from ..rng import RandomSource

# 512-bit safe prime p = 2q + 1; generator 4 spans the order-q QR subgroup.
DEFAULT_PRIME = int(
    "0x81DABD189B283740BE5D16F959BBAB3857FC33A8A1A12CF95AEED1DA4D5A8C3C"
    "18BFD109AA1DD62E4EE44E3BA8B62C57968E0E6908BB494354DF9EC26F24B257",
    16,
)
DEFAULT_GENERATOR = 4


class OtError(Exception):
    pass


class OtRound(Enum):
    SENDER_SETUP = "sender_setup"
    RECEIVER_CHOICE = "receiver_choice"
    SENDER_TRANSFER = "sender_transfer"


@dataclass(frozen=True)
class OtMessage:
    round: OtRound
    payload: bytes


class DhGroup:
    def __init__(self, prime: int = DEFAULT_PRIME, generator: int = DEFAULT_GENERATOR):
        self.p = prime
        self.q = (prime - 1) // 2
        self.g = generator
        self.element_len = (prime.bit_length() + 7) // 8

    def exp(self, scalar: int) -> int:
        return pow(self.g, scalar, self.p)

    def encode(self, e: int) -> bytes:
        return e.to_bytes(self.element_len, "big")

    def decode(self, data: bytes) -> int:
        if len(data) != self.element_len:
            raise OtError("bad group element length")
        e = int.from_bytes(data, "big")
        self.validate(e)
        return e

    def validate(self, e: int, subgroup_check: bool = False) -> None:
        if not (1 < e < self.p):
            raise OtError("group element out of range")
        if subgroup_check and pow(e, self.q, self.p) != 1:
            raise OtError("element not in the prime-order subgroup")

    def fresh_pair(self, rng: RandomSource) -> Tuple[int, int]:
        x = rng.scalar(self.q)
        return x, self.exp(x)


def _stream(key_material: bytes, n: int) -> bytes:
    out = bytearray()
    ctr = 0
    while len(out) < n:
        out += hashlib.sha256(key_material + ctr.to_bytes(4, "big")).digest()
        ctr += 1
    return bytes(out[:n])


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def _key(group: DhGroup, a_elem: int, b_elem: int, shared: int) -> bytes:
    return hashlib.sha256(
        b"oblivct-ot" + group.encode(a_elem) + group.encode(b_elem) + group.encode(shared)
    ).digest()


class OtSender:
    def __init__(self, group: DhGroup, rng: RandomSource, pair: Optional[Tuple[int, int]] = None):
        self.group = group
        self._a, self._A = pair if pair is not None else group.fresh_pair(rng)
        self._A_to_a = pow(self._A, self._a, group.p)
        self._inv_A_to_a = pow(self._A_to_a, group.p - 2, group.p)

    def setup_message(self) -> OtMessage:
        return OtMessage(OtRound.SENDER_SETUP, self.group.encode(self._A))

    def transfer(self, choice_msg: OtMessage, m0: bytes, m1: bytes) -> OtMessage:
        if choice_msg.round != OtRound.RECEIVER_CHOICE:
            raise OtError("expected receiver_choice")
        if len(m0) != len(m1):
            raise OtError("m0 and m1 must have equal length")
        p = self.group.p
        B = self.group.decode(choice_msg.payload)
        B_to_a = pow(B, self._a, p)
        k0 = _key(self.group, self._A, B, B_to_a)
        k1 = _key(self.group, self._A, B, B_to_a * self._inv_A_to_a % p)
        c0 = _xor(m0, _stream(k0, len(m0)))
        c1 = _xor(m1, _stream(k1, len(m1)))
        n = len(m0)
        return OtMessage(OtRound.SENDER_TRANSFER, n.to_bytes(4, "big") + c0 + c1)


class OtReceiver:
    def __init__(
        self,
        group: DhGroup,
        rng: RandomSource,
        choice: int,
        pair: Optional[Tuple[int, int]] = None,
    ):
        if choice not in (0, 1):
            raise OtError("choice must be 0 or 1")
        self.group = group
        self.choice = choice
        self._b, self._g_to_b = pair if pair is not None else group.fresh_pair(rng)
        self._A: Optional[int] = None
        self._B: Optional[int] = None

    def choice_message(self, setup_msg: OtMessage) -> OtMessage:
        if setup_msg.round != OtRound.SENDER_SETUP:
            raise OtError("expected sender_setup")
        A = self.group.decode(setup_msg.payload)
        self._A = A
        B = self._g_to_b if self.choice == 0 else self._g_to_b * A % self.group.p
        self._B = B
        return OtMessage(OtRound.RECEIVER_CHOICE, self.group.encode(B))

    def receive(self, transfer_msg: OtMessage) -> bytes:
        if transfer_msg.round != OtRound.SENDER_TRANSFER:
            raise OtError("expected sender_transfer")
        if self._A is None or self._B is None:
            raise OtError("choice message not yet produced")
        payload = transfer_msg.payload
        n = int.from_bytes(payload[:4], "big")
        if len(payload) != 4 + 2 * n:
            raise OtError("malformed transfer payload")
        ct = payload[4 : 4 + n] if self.choice == 0 else payload[4 + n :]
        k = _key(self.group, self._A, self._B, pow(self._A, self._b, self.group.p))
        return _xor(ct, _stream(k, n))


def ot_transfer(
    m0: bytes,
    m1: bytes,
    choice: int,
    rng: RandomSource,
    group: Optional[DhGroup] = None,
) -> Tuple[bytes, List[OtMessage]]:
    """Run both sides locally; returns (received message, transcript)."""
    group = group or DhGroup()
    sender = OtSender(group, rng.child("ot-sender"))
    receiver = OtReceiver(group, rng.child("ot-receiver"), choice)
    setup = sender.setup_message()
    choice_msg = receiver.choice_message(setup)
    transfer = sender.transfer(choice_msg, m0, m1)
    return receiver.receive(transfer), [setup, choice_msg, transfer]


# -- precomputed random OTs, derandomized at use --


@dataclass
class RandomOtSender:
    """Sender half of one precomputed OT: two random pads."""

    pad0: bytes
    pad1: bytes

    def respond(self, flip: int, m0: bytes, m1: bytes) -> bytes:
        if len(m0) != len(m1) or len(m0) != len(self.pad0):
            raise OtError("message length mismatch")
        lo, hi = (self.pad0, self.pad1) if flip == 0 else (self.pad1, self.pad0)
        return _xor(m0, lo) + _xor(m1, hi)


@dataclass
class RandomOtReceiver:
    """Receiver half: the random choice bit and the pad it learned."""

    choice: int
    pad: bytes

    def flip(self, real_choice: int) -> int:
        return real_choice ^ self.choice

    def recover(self, real_choice: int, response: bytes) -> bytes:
        n = len(self.pad)
        ct = response[:n] if real_choice == 0 else response[n:]
        return _xor(ct, self.pad)


def run_random_ots(
    sender_group: DhGroup,
    count: int,
    pad_len: int,
    sender_rng: RandomSource,
    receiver_rng: RandomSource,
    sender_pairs: Optional[Sequence[Tuple[int, int]]] = None,
    receiver_pairs: Optional[Sequence[Tuple[int, int]]] = None,
) -> Tuple[List[RandomOtSender], List[RandomOtReceiver]]:
    """Run `count` base OTs on random inputs (both sides in one process).

    The networked variant in the protocol module exchanges the same three
    rounds over the wire; this helper backs pools and tests.
    """
    senders: List[RandomOtSender] = []
    receivers: List[RandomOtReceiver] = []
    for i in range(count):
        pad0 = sender_rng.bytes(pad_len)
        pad1 = sender_rng.bytes(pad_len)
        c = receiver_rng.bit()
        s_pair = sender_pairs[i] if sender_pairs else None
        r_pair = receiver_pairs[i] if receiver_pairs else None
        sender = OtSender(sender_group, sender_rng, pair=s_pair)
        receiver = OtReceiver(sender_group, receiver_rng, c, pair=r_pair)
        msg = receiver.choice_message(sender.setup_message())
        got = receiver.receive(sender.transfer(msg, pad0, pad1))
        senders.append(RandomOtSender(pad0=pad0, pad1=pad1))
        receivers.append(RandomOtReceiver(choice=c, pad=got))
    return senders, receivers
