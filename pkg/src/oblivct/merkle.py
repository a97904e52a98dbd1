"""Append-only Merkle hash tree over certificate records.

The tree is sized to a fixed power-of-two capacity at construction and
empty leaves are padded with a constant digest, so every inclusion proof
for a given capacity has the same length. Leaf and interior hashes are
domain-separated (0x00 / 0x01 prefixes, RFC-6962 style).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

DIGEST_LEN = 32
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

MAX_DOMAIN_LEN = 253

# Sibling side flags: which side of the concatenation the sibling digest
# takes when folding the path hash upward.
SIDE_LEFT = 0
SIDE_RIGHT = 1


class MerkleError(Exception):
    pass


class LogFullError(MerkleError):
    pass


class IngestError(MerkleError):
    """Raised on a malformed certificate-file line; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def hash_leaf(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def hash_children(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


# Digest used for leaves that have not been appended yet.
PADDING_LEAF = hash_leaf(b"")


@dataclass(frozen=True)
class CertificateRecord:
    """One logged certificate: domain, public key, issue time, serial."""

    domain: str
    public_key: bytes
    issued_at: int
    serial: int

    def __post_init__(self):
        if not self.domain:
            raise ValueError("domain must be non-empty")
        raw = self.domain.encode("utf-8")
        if len(raw) > MAX_DOMAIN_LEN:
            raise ValueError(f"domain exceeds {MAX_DOMAIN_LEN} bytes")
        if self.domain != self.domain.lower():
            raise ValueError("domain must be lowercase")
        for name in ("issued_at", "serial"):
            v = getattr(self, name)
            if not (0 <= v < 1 << 64):
                raise ValueError(f"{name} out of u64 range")

    def to_bytes(self) -> bytes:
        """Canonical serialization: length-prefixed fields in declaration
        order, big-endian integers. Identical records serialize identically."""
        dom = self.domain.encode("utf-8")
        out = bytearray()
        out += len(dom).to_bytes(2, "big")
        out += dom
        out += len(self.public_key).to_bytes(2, "big")
        out += self.public_key
        out += self.issued_at.to_bytes(8, "big")
        out += self.serial.to_bytes(8, "big")
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CertificateRecord":
        off = 0

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(data):
                raise MerkleError("truncated record")
            chunk = data[off : off + n]
            off += n
            return chunk

        dom_len = int.from_bytes(take(2), "big")
        domain = take(dom_len).decode("utf-8")
        key_len = int.from_bytes(take(2), "big")
        public_key = take(key_len)
        issued_at = int.from_bytes(take(8), "big")
        serial = int.from_bytes(take(8), "big")
        return cls(domain=domain, public_key=public_key, issued_at=issued_at, serial=serial)

    def leaf_digest(self) -> bytes:
        return hash_leaf(self.to_bytes())


@dataclass(frozen=True, order=True)
class NodeId:
    """Position of a tree node: level 0 is the leaf layer."""

    level: int
    index: int


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    siblings: Tuple[Tuple[bytes, int], ...]  # (digest, SIDE_LEFT | SIDE_RIGHT)

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += self.leaf_index.to_bytes(8, "big")
        out += self.tree_size.to_bytes(8, "big")
        out += len(self.siblings).to_bytes(1, "big")
        for digest, side in self.siblings:
            out += bytes([side])
            out += digest
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        if len(data) < 17:
            raise MerkleError("truncated proof")
        leaf_index = int.from_bytes(data[0:8], "big")
        tree_size = int.from_bytes(data[8:16], "big")
        count = data[16]
        need = 17 + count * (1 + DIGEST_LEN)
        if len(data) < need:
            raise MerkleError("truncated proof")
        sibs = []
        off = 17
        for _ in range(count):
            side = data[off]
            if side not in (SIDE_LEFT, SIDE_RIGHT):
                raise MerkleError("bad side flag")
            sibs.append((bytes(data[off + 1 : off + 1 + DIGEST_LEN]), side))
            off += 1 + DIGEST_LEN
        return cls(leaf_index=leaf_index, tree_size=tree_size, siblings=tuple(sibs))


def tree_depth(tree_size: int) -> int:
    """Proof length for a padded complete tree holding tree_size leaves."""
    if tree_size < 1:
        raise ValueError("tree_size must be >= 1")
    return max(0, math.ceil(math.log2(tree_size))) if tree_size > 1 else 0


def proof_node_ids(leaf_index: int, tree_size: int) -> List[NodeId]:
    """NodeIds whose digests form the inclusion proof, bottom-up."""
    if leaf_index >= tree_size:
        raise IndexError("leaf_index out of range")
    depth = tree_depth(tree_size)
    ids = []
    idx = leaf_index
    for level in range(depth):
        ids.append(NodeId(level=level, index=idx ^ 1))
        idx >>= 1
    return ids


def verify_proof(leaf_digest: bytes, proof: InclusionProof, root: bytes) -> bool:
    """Fold leaf_digest with the proof siblings and compare against root.

    Returns False (never raises) on malformed lengths.
    """
    if len(leaf_digest) != DIGEST_LEN or len(root) != DIGEST_LEN:
        return False
    if proof.tree_size < 1 or proof.leaf_index >= proof.tree_size:
        return False
    if len(proof.siblings) != tree_depth(proof.tree_size):
        return False
    h = leaf_digest
    for digest, side in proof.siblings:
        if len(digest) != DIGEST_LEN:
            return False
        if side == SIDE_LEFT:
            h = hash_children(digest, h)
        elif side == SIDE_RIGHT:
            h = hash_children(h, digest)
        else:
            return False
    return h == root


class MerkleLog:
    """Fixed-capacity append-only log with cached interior nodes.

    capacity must be a power of two; proofs for a log of this capacity all
    have length log2(capacity).
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two >= 1")
        self.capacity = capacity
        self.depth = capacity.bit_length() - 1
        self.size = 0
        self._records: List[CertificateRecord] = []
        # levels[l][i] is the digest of node (level l, index i); level 0 is leaves.
        self._levels: List[List[bytes]] = [[PADDING_LEAF] * capacity]
        for l in range(1, self.depth + 1):
            below = self._levels[l - 1]
            self._levels.append(
                [hash_children(below[2 * i], below[2 * i + 1]) for i in range(len(below) // 2)]
            )

    @property
    def root(self) -> bytes:
        return self._levels[self.depth][0]

    def append(self, record: CertificateRecord) -> int:
        if self.size >= self.capacity:
            raise LogFullError(f"log at capacity {self.capacity}")
        idx = self.size
        self._records.append(record)
        self._levels[0][idx] = record.leaf_digest()
        i = idx
        for l in range(1, self.depth + 1):
            i >>= 1
            below = self._levels[l - 1]
            self._levels[l][i] = hash_children(below[2 * i], below[2 * i + 1])
        self.size += 1
        return idx

    def record(self, leaf_index: int) -> CertificateRecord:
        if leaf_index >= self.size:
            raise IndexError("leaf_index out of range")
        return self._records[leaf_index]

    def leaf_digest(self, leaf_index: int) -> bytes:
        if leaf_index >= self.capacity:
            raise IndexError("leaf_index out of range")
        return self._levels[0][leaf_index]

    def node_digest(self, node: NodeId) -> bytes:
        if not (0 <= node.level <= self.depth):
            raise IndexError("level out of range")
        layer = self._levels[node.level]
        if not (0 <= node.index < len(layer)):
            raise IndexError("index out of range")
        return layer[node.index]

    def inclusion_proof(self, leaf_index: int) -> InclusionProof:
        if leaf_index >= self.size:
            raise IndexError("leaf_index out of range")
        sibs = []
        idx = leaf_index
        for level in range(self.depth):
            sib = idx ^ 1
            side = SIDE_LEFT if sib < idx else SIDE_RIGHT
            sibs.append((self._levels[level][sib], side))
            idx >>= 1
        return InclusionProof(leaf_index=leaf_index, tree_size=self.capacity, siblings=tuple(sibs))

    def recompute_root(self) -> bytes:
        """Brute-force root from the leaf layer, ignoring cached interiors."""
        layer = list(self._levels[0])
        while len(layer) > 1:
            layer = [hash_children(layer[2 * i], layer[2 * i + 1]) for i in range(len(layer) // 2)]
        return layer[0]


def parse_certificate_line(line: str, line_no: int) -> CertificateRecord:
    parts = line.split(",")
    if len(parts) != 4:
        raise IngestError(line_no, f"expected 4 comma-separated fields, got {len(parts)}")
    domain, key_hex, issued_s, serial_s = (p.strip() for p in parts)
    try:
        public_key = bytes.fromhex(key_hex)
    except ValueError:
        raise IngestError(line_no, "public_key is not valid hex") from None
    try:
        issued_at = int(issued_s)
        serial = int(serial_s)
    except ValueError:
        raise IngestError(line_no, "issued_at/serial must be integers") from None
    try:
        return CertificateRecord(domain=domain, public_key=public_key, issued_at=issued_at, serial=serial)
    except ValueError as e:
        raise IngestError(line_no, str(e)) from None


def parse_certificate_file(lines: Iterable[str]) -> List[CertificateRecord]:
    """Parse newline-delimited `domain,hex(public_key),issued_at,serial` records.

    Blank lines are tolerated; any malformed line aborts with its line number.
    """
    records = []
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        records.append(parse_certificate_line(stripped, line_no))
    return records
