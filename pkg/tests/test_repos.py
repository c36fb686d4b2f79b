"""Trust services: hash distribution, code certification, evidence chain."""

import math

import pytest
from hypothesis import given, strategies as st

from asisim.core import ActorKind, Simulator, sha256_hex
from asisim.repos import (
    AgsRepository,
    ChainCheck,
    DuplicatePattern,
    EvidenceRecorder,
    HashcodeRepository,
    MissingSoftwareId,
    PatternField,
    PatternRecord,
    PatternRepository,
    UnknownAuthor,
    conforms,
    encode_payload,
    extract_imprint,
    record_digest,
    stamp_code,
    verify_export,
    verify_records,
)


@pytest.fixture
def sim():
    s = Simulator(9)
    s.add_device("dev-01", prepared=True)
    s.add_device("dev-02", prepared=True)
    s.add_actor("E1", ActorKind.ASI)
    s.add_actor("vendor", ActorKind.SYSTEM)
    return s


class TestHashcodeRepository:
    def test_vendor_hash_trusted_after_sync(self, sim):
        repo = HashcodeRepository(sim)
        digest = sha256_hex(b"app")
        assert repo.publish_hash(digest, "app", publisher="vendor")
        assert not repo.trusted("dev-01", digest)
        repo.sync_device("dev-01")
        assert repo.trusted("dev-01", digest)
        assert not repo.trusted("dev-02", digest)

    def test_adversary_publication_rejected_and_logged(self, sim):
        repo = HashcodeRepository(sim)
        assert not repo.publish_hash(sha256_hex(b"mal"), "mal", publisher="E1")
        repo.sync_all()
        assert not repo.trusted("dev-01", sha256_hex(b"mal"))
        assert any(r.kind == "publish-rejected" for r in sim.log)

    def test_republish_is_idempotent_ack(self, sim):
        repo = HashcodeRepository(sim)
        digest = sha256_hex(b"app")
        assert repo.publish_hash(digest, "app")
        assert repo.publish_hash(digest, "app")
        repo.sync_all()
        assert repo.trusted("dev-01", digest)


class TestAgsRepository:
    def test_certified_after_delay(self, sim):
        gar = AgsRepository(sim, certification_delay=10)
        gar.register_author("E1")
        code = stamp_code(b"body", "tool-1", "E1")
        record = gar.submit_ags(code, "E1")
        assert not record.certified
        sim.run_until(sim.tick + 9)
        assert not record.certified
        sim.run_until(sim.tick + 1)
        assert record.certified

    def test_missing_imprint_rejected(self, sim):
        gar = AgsRepository(sim)
        gar.register_author("E1")
        with pytest.raises(MissingSoftwareId):
            gar.submit_ags(b"no imprint here", "E1")

    def test_unregistered_author_rejected(self, sim):
        gar = AgsRepository(sim)
        with pytest.raises(UnknownAuthor):
            gar.submit_ags(stamp_code(b"x", "t", "E9"), "E9")

    def test_content_addressed_resubmission_returns_same_record(self, sim):
        gar = AgsRepository(sim)
        gar.register_author("E1")
        code = stamp_code(b"body", "tool-1", "E1")
        assert gar.submit_ags(code, "E1") is gar.submit_ags(code, "E1")

    def test_modified_code_gets_a_new_record(self, sim):
        gar = AgsRepository(sim)
        gar.register_author("E1")
        a = gar.submit_ags(stamp_code(b"v1", "tool-1", "E1"), "E1")
        b = gar.submit_ags(stamp_code(b"v2", "tool-1", "E1"), "E1")
        assert a.code_hash != b.code_hash

    def test_imprint_extraction(self):
        assert extract_imprint(stamp_code(b"zzz", "tool.x", "E1")) == ("tool.x", "E1")
        assert extract_imprint(b"plain") is None


class TestPatterns:
    FIELDS = (PatternField("verb", 3, 3, literal=b"GET"), PatternField("path", 1, 8))

    def record(self):
        return PatternRecord("p", 80, self.FIELDS, certified=True)

    def test_conforming_payload(self):
        payload = encode_payload(self.FIELDS, {"path": b"/idx"})
        assert conforms(self.record(), payload) == (True, "ok")

    def test_trailing_bytes_deviate(self):
        payload = encode_payload(self.FIELDS, {"path": b"/idx"}) + b"x"
        ok, reason = conforms(self.record(), payload)
        assert not ok and reason == "trailing-bytes"

    def test_unknown_field_deviates(self):
        ok, reason = conforms(self.record(), b"verb=GET;evil=1;")
        assert not ok and reason.startswith("unknown-field")

    def test_out_of_range_length_deviates(self):
        ok, reason = conforms(self.record(), b"verb=GET;path=/way-too-long-for-this;")
        assert not ok and reason == "length:path"

    def test_literal_mismatch_deviates(self):
        ok, reason = conforms(self.record(), b"verb=PUT;path=/idx;")
        assert not ok and reason.startswith("literal-mismatch")

    def test_one_certified_pattern_per_key(self):
        repo = PatternRepository()
        repo.certify(PatternRecord("p", 80, self.FIELDS))
        with pytest.raises(DuplicatePattern):
            repo.certify(PatternRecord("p", 80, self.FIELDS))


class TestEvidenceChain:
    def build(self, sim, n):
        rec = EvidenceRecorder(sim)
        for i in range(n):
            rec.append(category=(i % 9) + 1, subject=f"E{i % 3}", context=f"case-{i}")
        return rec

    def test_genesis_prev_is_zero_sentinel(self, sim):
        rec = self.build(sim, 1)
        assert rec.records()[0].prev_digest == "0" * 64
        assert rec.records()[0].seq == 1

    def test_empty_log_is_intact(self, sim):
        assert EvidenceRecorder(sim).verify_chain() == ChainCheck(intact=True)

    def test_appends_keep_chain_intact(self, sim):
        rec = self.build(sim, 100)
        assert rec.verify_chain().intact

    def test_tamper_oracle_break_points(self, sim):
        # Oracle: mutating record i's context breaks the link checked at
        # i+1 (its successor's prev_digest), except the final record,
        # caught by the head digest at its own index.
        n = 60
        rec = self.build(sim, n)
        export = rec.export()
        lines = export.splitlines()
        for i in range(1, n + 1):
            expected = i + 1 if i < n else n
            parts = lines[i - 1].split("\t")
            parts[5] = parts[5] + "X"
            tampered = "\n".join(lines[: i - 1] + ["\t".join(parts)] + lines[i:]) + "\n"
            check = verify_export(tampered)
            assert not check.intact
            assert check.broken_at == expected, f"record {i}"

    def test_tampered_prev_digest_breaks_at_own_index(self, sim):
        rec = self.build(sim, 10)
        lines = rec.export().splitlines()
        parts = lines[4].split("\t")
        parts[1] = "f" * 64
        lines[4] = "\t".join(parts)
        check = verify_export("\n".join(lines) + "\n")
        assert check == ChainCheck(intact=False, broken_at=5)

    def test_export_round_trip_verifies(self, sim):
        rec = self.build(sim, 25)
        assert verify_export(rec.export()).intact

    def test_record_digest_matches_successor_prev(self, sim):
        rec = self.build(sim, 5)
        records = rec.records()
        for a, b in zip(records, records[1:]):
            assert record_digest(a) == b.prev_digest

    @given(st.integers(min_value=0, max_value=40))
    def test_chain_always_verifies_after_any_number_of_appends(self, n):
        sim = Simulator(1)
        rec = EvidenceRecorder(sim)
        for i in range(n):
            rec.append(1, "E1", f"c{i}")
        assert rec.verify_chain().intact
        assert verify_records(rec.records()).intact


class TestSampling:
    def test_p_zero_selects_nothing(self, sim):
        rec = EvidenceRecorder(sim)
        for i in range(50):
            rec.append(1, "E1", f"c{i}")
        assert rec.sample(0.0, sim.stream("sampling")) == []

    def test_p_one_selects_everything(self, sim):
        rec = EvidenceRecorder(sim)
        for i in range(50):
            rec.append(1, "E1", f"c{i}")
        assert len(rec.sample(1.0, sim.stream("sampling"))) == 50

    def test_p_half_within_three_sigma(self, sim):
        rec = EvidenceRecorder(sim)
        for i in range(1000):
            rec.append(1, "E1", f"c{i}")
        count = len(rec.sample(0.5, sim.stream("sampling")))
        sigma = math.sqrt(1000 * 0.25)
        assert abs(count - 500) <= 3 * sigma

    def test_probability_validated(self, sim):
        rec = EvidenceRecorder(sim)
        with pytest.raises(ValueError):
            rec.sample(1.3, sim.stream("sampling"))
