"""Key custody: safes, directory trust, sealing, equivalent-key pools."""

from itertools import combinations

import pytest

from asisim.core import Simulator
from asisim.crypto import (
    DuplicateSafe,
    IntegrityFailure,
    KeyInfrastructure,
    KeyKind,
    KeyUse,
    SubsetTooLarge,
    UnknownClient,
    UnknownHashcode,
    UntrustedSafe,
    WrongSafe,
)
from asisim.repos import EvidenceRecorder


@pytest.fixture
def sim():
    s = Simulator(5)
    s.add_device("dev-01", prepared=True)
    return s


@pytest.fixture
def evidence(sim):
    return EvidenceRecorder(sim)


@pytest.fixture
def keys(sim, evidence):
    return KeyInfrastructure(sim, evidence)


class TestSafes:
    def test_manufactured_safe_is_trusted(self, keys):
        safe = keys.provision_safe("dev-01", manufactured=True)
        key = keys.create_service_key("svc")
        handle = keys.request_key(safe.safe_id, key)
        assert handle.owner_safe == safe.safe_id
        assert handle.key_hashcode == key

    def test_software_simulated_safe_is_refused_and_reported(self, keys, evidence):
        safe = keys.provision_safe("rogue-host", manufactured=False)
        key = keys.create_service_key("svc")
        with pytest.raises(UntrustedSafe):
            keys.request_key(safe.safe_id, key)
        assert [r.category for r in evidence.records()] == [1]

    def test_duplicate_provision_rejected(self, keys):
        keys.provision_safe("dev-01", manufactured=True)
        with pytest.raises(DuplicateSafe):
            keys.provision_safe("dev-01", manufactured=True)

    def test_unknown_hashcode(self, keys):
        safe = keys.provision_safe("dev-01", manufactured=True)
        with pytest.raises(UnknownHashcode):
            keys.request_key(safe.safe_id, "ff" * 32)

    def test_directory_entry_is_addressed_and_opaque(self, keys):
        keys.provision_safe("dev-01", manufactured=True)
        key = keys.create_service_key("svc")
        entry = keys.directory_entry("safe:dev-01", key)
        assert entry.service_id == "svc" and entry.key_hashcode == key
        assert keys._secrets[key] not in entry.sealed_key
        other = keys.directory_entry("safe:elsewhere", key)
        assert other.sealed_key != entry.sealed_key  # addressed per destination


class TestSealing:
    def test_round_trip(self, keys):
        safe = keys.provision_safe("dev-01", manufactured=True)
        handle = keys.install_handle(safe.safe_id, keys.create_service_key("svc"), KeyKind.SESSION)
        blob = keys.seal(safe.safe_id, handle, b"payload bytes")
        assert keys.unseal(safe.safe_id, handle, blob) == b"payload bytes"

    def test_any_modification_fails_loudly(self, keys):
        safe = keys.provision_safe("dev-01", manufactured=True)
        handle = keys.install_handle(safe.safe_id, keys.create_service_key("svc"), KeyKind.SESSION)
        blob = keys.seal(safe.safe_id, handle, b"payload bytes")
        for i in range(len(blob)):
            tampered = blob[:i] + bytes([blob[i] ^ 1]) + blob[i + 1 :]
            with pytest.raises(IntegrityFailure):
                keys.unseal(safe.safe_id, handle, tampered)

    def test_pure_relay_is_never_detected(self, keys):
        # Eavesdropping leaves the blob untouched: indistinguishable by design.
        safe = keys.provision_safe("dev-01", manufactured=True)
        handle = keys.install_handle(safe.safe_id, keys.create_service_key("svc"), KeyKind.SESSION)
        blob = keys.seal(safe.safe_id, handle, b"payload bytes")
        relayed = bytes(blob)
        assert keys.unseal(safe.safe_id, handle, relayed) == b"payload bytes"

    def test_wrong_safe(self, keys):
        a = keys.provision_safe("dev-01", manufactured=True)
        b = keys.provision_safe("other", manufactured=True)
        handle = keys.install_handle(a.safe_id, keys.create_service_key("svc"), KeyKind.SESSION)
        with pytest.raises(WrongSafe):
            keys.seal(b.safe_id, handle, b"x")
        blob = keys.seal(a.safe_id, handle, b"x")
        with pytest.raises(WrongSafe):
            keys.unseal(b.safe_id, handle, blob)


class TestPools:
    def test_subset_cardinality_and_idempotence(self, keys):
        keys.provision_safe("dev-01", manufactured=True)
        pool = keys.create_pool("svc", 16)
        first = keys.issue_subset("svc", "safe:dev-01", 3)
        assert len(set(first)) == 3
        assert set(first) < set(pool.members)
        assert keys.issue_subset("svc", "safe:dev-01", 3) == first

    def test_strict_subset_rule(self, keys):
        keys.provision_safe("dev-01", manufactured=True)
        keys.create_pool("svc", 16)
        with pytest.raises(SubsetTooLarge):
            keys.issue_subset("svc", "safe:dev-01", 16)

    def test_unknown_client(self, keys):
        keys.create_pool("svc", 4)
        with pytest.raises(UnknownClient):
            keys.verify_key_use("svc", "safe:nobody", "aa" * 32)

    def test_in_subset_legitimate_out_of_subset_proof(self, keys, evidence):
        keys.provision_safe("dev-01", manufactured=True)
        pool = keys.create_pool("svc", 8)
        subset = keys.issue_subset("svc", "safe:dev-01", 2)
        assert keys.verify_key_use("svc", "safe:dev-01", subset[0]) is KeyUse.LEGITIMATE
        outside = next(m for m in pool.members if m not in subset)
        assert keys.verify_key_use("svc", "safe:dev-01", outside) is KeyUse.COMPROMISE_PROOF
        assert [r.category for r in evidence.records()] == [1]

    def test_session_key_is_lowest_hashcode(self, keys):
        keys.provision_safe("dev-01", manufactured=True)
        keys.create_pool("svc", 8)
        subset = keys.issue_subset("svc", "safe:dev-01", 3)
        assert keys.session_key("svc", "safe:dev-01") == min(subset)

    def test_exhaustive_soundness_and_completeness_small_pools(self, sim):
        # Oracle: classification must equal plain membership, for every
        # subset of every pool with at most 8 members.
        for n in range(2, 9):
            keys = KeyInfrastructure(sim := Simulator(n), EvidenceRecorder(sim))
            pool = keys.create_pool("svc", n)
            client_no = 0
            for k in range(1, n):
                for subset in combinations(pool.members, k):
                    client = f"client-{client_no}"
                    client_no += 1
                    keys.record_assignment("svc", client, subset)
                    for used in pool.members:
                        verdict = keys.verify_key_use("svc", client, used)
                        if used in subset:
                            assert verdict is KeyUse.LEGITIMATE  # soundness: no false accusation
                        else:
                            assert verdict is KeyUse.COMPROMISE_PROOF  # completeness


class TestKeyOpacity:
    def test_public_surface_never_returns_key_material(self, sim, evidence):
        keys = KeyInfrastructure(sim, evidence)
        safe = keys.provision_safe("dev-01", manufactured=True)
        key = keys.create_service_key("svc")
        handle = keys.request_key(safe.safe_id, key)
        keys.create_pool("pool", 6)
        subset = keys.issue_subset("pool", safe.safe_id, 2)
        blob = keys.seal(safe.safe_id, handle, b"msg")
        outputs = [
            repr(safe),
            repr(handle),
            repr(subset),
            repr(keys.pool("pool")),
            keys.directory_export(),
            repr(keys.unseal(safe.safe_id, handle, blob)),
        ]
        secrets = list(keys._secrets.values())
        assert secrets, "test needs minted keys"
        for material in secrets:
            for text in outputs:
                assert material.hex() not in text
                assert str(material) not in text
        # the sealed blob carries payload + tag, never the key itself
        for material in secrets:
            assert material not in blob

    def test_directory_export_is_sorted_table(self, keys):
        keys.create_service_key("svc-b")
        keys.create_service_key("svc-a")
        lines = keys.directory_export().splitlines()
        assert len(lines) == 2
        assert lines == sorted(lines)
        for line in lines:
            hashcode, service = line.split("\t")
            assert len(hashcode) == 64
            assert service.startswith("svc-")
