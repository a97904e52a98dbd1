import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oblivct.merkle import (
    SIDE_LEFT,
    SIDE_RIGHT,
    CertificateRecord,
    InclusionProof,
    IngestError,
    LogFullError,
    MerkleLog,
    NodeId,
    PADDING_LEAF,
    hash_children,
    hash_leaf,
    parse_certificate_file,
    proof_node_ids,
    verify_proof,
)


def rec(i: int, domain: str | None = None) -> CertificateRecord:
    return CertificateRecord(
        domain=domain or f"example{i}.com",
        public_key=bytes([i % 256] * 16),
        issued_at=1_600_000_000 + i,
        serial=i,
    )


def filled_log(n: int, capacity: int | None = None) -> MerkleLog:
    cap = capacity or (1 << max(0, (n - 1).bit_length()))
    log = MerkleLog(cap)
    for i in range(n):
        log.append(rec(i))
    return log


class TestRecord:
    def test_canonical_serialization_roundtrip(self):
        r = rec(7)
        assert CertificateRecord.from_bytes(r.to_bytes()) == r

    def test_identical_records_identical_bytes(self):
        assert rec(3).to_bytes() == rec(3).to_bytes()

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            CertificateRecord(domain="", public_key=b"k", issued_at=0, serial=0)
        with pytest.raises(ValueError):
            CertificateRecord(domain="A.com", public_key=b"k", issued_at=0, serial=0)
        with pytest.raises(ValueError):
            CertificateRecord(domain="x" * 254, public_key=b"k", issued_at=0, serial=0)

    def test_digest_is_32_bytes(self):
        assert len(rec(0).leaf_digest()) == 32
        assert len(hash_children(b"\0" * 32, b"\1" * 32)) == 32


class TestAppend:
    def test_single_leaf_root_is_leaf_hash(self):
        log = MerkleLog(1)
        idx = log.append(rec(0))
        assert idx == 0
        assert log.root == hash_leaf(rec(0).to_bytes())

    def test_two_leaf_root(self):
        log = MerkleLog(2)
        log.append(rec(0))
        log.append(rec(1))
        expected = hash_children(hash_leaf(rec(0).to_bytes()), hash_leaf(rec(1).to_bytes()))
        assert log.root == expected

    def test_incremental_root_matches_recompute_oracle(self):
        log = MerkleLog(1024)
        for i in range(1000):
            log.append(rec(i))
        assert log.root == log.recompute_root()

    def test_capacity_exceeded(self):
        log = MerkleLog(2)
        log.append(rec(0))
        log.append(rec(1))
        with pytest.raises(LogFullError):
            log.append(rec(2))

    def test_old_proofs_survive_appends_to_same_capacity(self):
        # Proofs are against the padded capacity root; appends change the root,
        # so a proof taken before an append verifies against the old root only.
        log = MerkleLog(8)
        log.append(rec(0))
        old_root = log.root
        proof = log.inclusion_proof(0)
        log.append(rec(1))
        assert verify_proof(rec(0).leaf_digest(), proof, old_root)
        assert not verify_proof(rec(0).leaf_digest(), proof, log.root)
        assert verify_proof(rec(0).leaf_digest(), log.inclusion_proof(0), log.root)


class TestProofs:
    def test_single_leaf_empty_proof(self):
        log = filled_log(1, capacity=1)
        proof = log.inclusion_proof(0)
        assert proof.siblings == ()
        assert verify_proof(log.leaf_digest(0), proof, log.root)

    def test_eight_leaf_proof_length(self):
        log = filled_log(8)
        for i in range(8):
            assert len(log.inclusion_proof(i).siblings) == 3

    def test_proof_out_of_range(self):
        log = filled_log(4)
        with pytest.raises(IndexError):
            log.inclusion_proof(4)

    def test_all_indices_of_4096_leaf_tree_verify(self):
        log = filled_log(4096)
        root = log.root
        for i in range(4096):
            assert verify_proof(log.leaf_digest(i), log.inclusion_proof(i), root)

    def test_empty_proof_leaf_equals_root(self):
        leaf = hash_leaf(b"data")
        proof = InclusionProof(leaf_index=0, tree_size=1, siblings=())
        assert verify_proof(leaf, proof, leaf)

    def test_tamper_any_sibling_byte_fails(self):
        log = filled_log(16)
        root = log.root
        proof = log.inclusion_proof(5)
        leaf = log.leaf_digest(5)
        for si, (digest, side) in enumerate(proof.siblings):
            for bi in range(len(digest)):
                bad = bytearray(digest)
                bad[bi] ^= 0x01
                sibs = list(proof.siblings)
                sibs[si] = (bytes(bad), side)
                tampered = InclusionProof(proof.leaf_index, proof.tree_size, tuple(sibs))
                assert not verify_proof(leaf, tampered, root)

    def test_tampered_leaf_and_root_fail(self):
        log = filled_log(16)
        proof = log.inclusion_proof(3)
        leaf = bytearray(log.leaf_digest(3))
        leaf[0] ^= 1
        assert not verify_proof(bytes(leaf), proof, log.root)
        root = bytearray(log.root)
        root[31] ^= 1
        assert not verify_proof(log.leaf_digest(3), proof, bytes(root))

    def test_malformed_lengths_return_false(self):
        log = filled_log(4)
        proof = log.inclusion_proof(0)
        short = InclusionProof(0, 4, proof.siblings[:1])
        assert not verify_proof(log.leaf_digest(0), short, log.root)
        assert not verify_proof(b"\0" * 31, proof, log.root)

    def test_proof_serialization_roundtrip(self):
        log = filled_log(8)
        proof = log.inclusion_proof(5)
        assert InclusionProof.from_bytes(proof.to_bytes()) == proof


class TestProofNodeIds:
    def test_two_leaf(self):
        assert proof_node_ids(0, 2) == [NodeId(0, 1)]

    def test_five_of_eight(self):
        assert proof_node_ids(5, 8) == [NodeId(0, 4), NodeId(1, 3), NodeId(2, 0)]

    def test_single_leaf(self):
        assert proof_node_ids(0, 1) == []

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            proof_node_ids(2, 2)

    def test_node_ids_reconstruct_proof_siblings(self):
        log = filled_log(64)
        for i in (0, 17, 63):
            proof = log.inclusion_proof(i)
            ids = proof_node_ids(i, 64)
            fetched = [log.node_digest(nid) for nid in ids]
            assert fetched == [d for d, _ in proof.siblings]

    def test_side_flags_match_index_bits(self):
        log = filled_log(8)
        proof = log.inclusion_proof(5)
        # bit l of the leaf index says whether the path node is a right child,
        # i.e. the sibling sits on the left.
        for l, (_, side) in enumerate(proof.siblings):
            expected = SIDE_LEFT if (5 >> l) & 1 else SIDE_RIGHT
            assert side == expected


class TestDeterminism:
    @given(st.lists(st.integers(min_value=0, max_value=1000), min_size=1, max_size=32))
    @settings(max_examples=25, deadline=None)
    def test_identical_leaf_sequences_identical_roots(self, seeds):
        cap = 1 << (len(seeds) - 1).bit_length() if len(seeds) > 1 else 1
        log1 = MerkleLog(cap)
        log2 = MerkleLog(cap)
        for s in seeds:
            log1.append(rec(s))
            log2.append(rec(s))
        assert log1.root == log2.root

    @given(
        st.integers(min_value=1, max_value=64),
    )
    @settings(max_examples=20, deadline=None)
    def test_roundtrip_every_leaf(self, n):
        log = filled_log(n)
        for i in range(n):
            assert verify_proof(log.leaf_digest(i), log.inclusion_proof(i), log.root)


class TestIngestFormat:
    def test_parse_ok(self):
        lines = ["a.com,00ff,1600000000,1", "b.org,aa,1600000001,2"]
        records = parse_certificate_file(lines)
        assert len(records) == 2
        assert records[0].domain == "a.com"
        assert records[0].public_key == b"\x00\xff"

    def test_blank_lines_skipped(self):
        assert len(parse_certificate_file(["", "a.com,00,1,1", "  "])) == 1

    def test_bad_hex_reports_line(self):
        with pytest.raises(IngestError) as ei:
            parse_certificate_file(["a.com,00,1,1", "b.com,zz,1,2"])
        assert ei.value.line_no == 2

    def test_bad_field_count_reports_line(self):
        with pytest.raises(IngestError) as ei:
            parse_certificate_file(["a.com,00,1"])
        assert ei.value.line_no == 1

    def test_empty_file(self):
        assert parse_certificate_file([]) == []
        # Empty log still has a defined constant root.
        log = MerkleLog(4)
        assert log.root == hash_children(
            hash_children(PADDING_LEAF, PADDING_LEAF), hash_children(PADDING_LEAF, PADDING_LEAF)
        )
