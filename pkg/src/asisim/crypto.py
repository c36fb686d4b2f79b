"""Key custody: safes with opaque handles, sealing, and equivalent-key pools.

Raw key material never crosses this module's public surface. Callers hold
``KeyHandle`` tokens and refer to keys by their hashcode; sealing produces
an authenticity tag, so any in-transit modification fails loudly while a
pure relay of an unmodified blob is indistinguishable from honest traffic
(eavesdropping is deliberately not detectable here).

Service keys come in interchangeable pools. Every client safe is issued a
strict subset of a pool, recorded at issuance, so a single use of an
out-of-subset key is standalone proof that some safe was compromised.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from enum import Enum
from hashlib import sha256
from typing import Optional

from .core import Simulator, kv, sha256_hex
from .repos import EvidenceRecorder

_TAG_LEN = 64  # hex chars of the 256-bit authenticity tag


class DuplicateSafe(Exception):
    pass


class UnknownSafe(Exception):
    pass


class UntrustedSafe(Exception):
    pass


class UnknownHashcode(Exception):
    pass


class SubsetTooLarge(Exception):
    pass


class UnknownClient(Exception):
    pass


class UnknownService(Exception):
    pass


class WrongSafe(Exception):
    pass


class IntegrityFailure(Exception):
    pass


class KeyKind(Enum):
    PUBLIC = "Public"
    PRIVATE = "Private"
    SESSION = "Session"
    MESK = "Mesk"


class KeyUse(Enum):
    LEGITIMATE = "Legitimate"
    COMPROMISE_PROOF = "CompromiseProof"


@dataclass(frozen=True)
class KeyHandle:
    handle_id: str
    owner_safe: str
    key_kind: KeyKind
    key_hashcode: str


@dataclass
class KeySafe:
    safe_id: str
    owner: str
    provisioned_at_manufacture: bool
    handles: dict[str, KeyHandle] = field(default_factory=dict)


@dataclass(frozen=True)
class DirectoryEntry:
    key_hashcode: str
    sealed_key: bytes  # opaque; usable only by the destination safe
    service_id: str


@dataclass
class MeskPool:
    service_id: str
    members: tuple[str, ...]
    assignments: dict[str, tuple[str, ...]] = field(default_factory=dict)


class KeyInfrastructure:
    """Safes, the hashcode-keyed directory, sealing, and pool issuance."""

    def __init__(self, sim: Simulator, evidence: Optional[EvidenceRecorder] = None):
        self._sim = sim
        self._evidence = evidence
        self._safes: dict[str, KeySafe] = {}
        self._safe_by_owner: dict[str, str] = {}
        self._trusted_safes: set[str] = set()
        self._secrets: dict[str, bytes] = {}
        self._directory: dict[str, str] = {}  # key_hashcode -> service_id
        self._pools: dict[str, MeskPool] = {}
        self._next_handle = 0
        self._next_key = 0

    # -- safes ------------------------------------------------------------

    def provision_safe(self, owner: str, manufactured: bool) -> KeySafe:
        if owner in self._safe_by_owner:
            raise DuplicateSafe(owner)
        safe_id = f"safe:{owner}"
        safe = KeySafe(safe_id=safe_id, owner=owner, provisioned_at_manufacture=manufactured)
        self._safes[safe_id] = safe
        self._safe_by_owner[owner] = safe_id
        if manufactured:
            self._trusted_safes.add(safe_id)
        self._sim.record("safe-provisioned", kv(("safe", safe_id), ("manufactured", int(manufactured))))
        return safe

    def safe(self, safe_id: str) -> KeySafe:
        try:
            return self._safes[safe_id]
        except KeyError:
            raise UnknownSafe(safe_id) from None

    def safe_of(self, owner: str) -> KeySafe:
        safe_id = self._safe_by_owner.get(owner)
        if safe_id is None:
            raise UnknownSafe(owner)
        return self._safes[safe_id]

    # -- key creation and the directory ------------------------------------

    def _mint_key(self, service_id: str) -> str:
        material = bytes(self._sim.stream("keys").randrange(256) for _ in range(32))
        self._next_key += 1
        hashcode = sha256_hex(material)
        self._secrets[hashcode] = material
        self._directory[hashcode] = service_id
        return hashcode

    def create_service_key(self, service_id: str) -> str:
        """Mint one key for a service; only its hashcode is returned."""
        return self._mint_key(service_id)

    def install_handle(self, safe_id: str, key_hashcode: str, kind: KeyKind) -> KeyHandle:
        """Directory-side delivery of a key into a safe (no trust check)."""
        safe = self.safe(safe_id)
        handle = KeyHandle(
            handle_id=f"kh-{self._next_handle:04d}",
            owner_safe=safe_id,
            key_kind=kind,
            key_hashcode=key_hashcode,
        )
        self._next_handle += 1
        safe.handles[handle.handle_id] = handle
        return handle

    def directory_entry(self, requester: str, key_hashcode: str) -> DirectoryEntry:
        """Lookup is by hashcode only; the blob is addressed to one safe."""
        service = self._directory.get(key_hashcode)
        if service is None:
            raise UnknownHashcode(key_hashcode)
        sealed = b"sealed:" + sha256(f"{requester}:{key_hashcode}".encode()).hexdigest().encode()
        return DirectoryEntry(key_hashcode=key_hashcode, sealed_key=sealed, service_id=service)

    def request_key(self, requester: str, key_hashcode: str) -> KeyHandle:
        """Deliver a directory key, sealed for the requesting safe."""
        safe = self.safe(requester)
        if requester not in self._trusted_safes:
            if self._evidence is not None:
                self._evidence.append(1, safe.owner, f"key-request-from-untrusted-safe;safe={requester}")
            raise UntrustedSafe(requester)
        self.directory_entry(requester, key_hashcode)
        handle = self.install_handle(requester, key_hashcode, KeyKind.PUBLIC)
        self._sim.record("key-delivered", kv(("safe", requester), ("sha", key_hashcode)))
        return handle

    def directory_export(self) -> str:
        lines = [f"{h}\t{s}" for h, s in sorted(self._directory.items())]
        return "\n".join(lines) + ("\n" if lines else "")

    # -- equivalent-key pools ----------------------------------------------

    def create_pool(self, service_id: str, size: int) -> MeskPool:
        members = tuple(sorted(self._mint_key(service_id) for _ in range(size)))
        pool = MeskPool(service_id=service_id, members=members)
        self._pools[service_id] = pool
        return pool

    def pool(self, service_id: str) -> MeskPool:
        try:
            return self._pools[service_id]
        except KeyError:
            raise UnknownService(service_id) from None

    def issue_subset(self, service_id: str, client: str, k: int) -> tuple[str, ...]:
        """Assign a deterministic strict k-subset of the pool to a client safe.

        Repeat calls return the recorded subset unchanged.
        """
        pool = self.pool(service_id)
        if k >= len(pool.members):
            raise SubsetTooLarge(f"k={k} pool={len(pool.members)}")
        assigned = pool.assignments.get(client)
        if assigned is not None:
            return assigned
        rng = self._sim.stream(f"mesk:{service_id}:{client}")
        subset = tuple(sorted(rng.sample(pool.members, k)))
        pool.assignments[client] = subset
        for hashcode in subset:
            self.install_handle(client, hashcode, KeyKind.MESK)
        self._sim.record("mesk-issued", kv(("service", service_id), ("client", client), ("k", k)))
        return subset

    def record_assignment(self, service_id: str, client: str, subset: tuple[str, ...]) -> None:
        """Pin an explicit subset (harness use; still strict and immutable)."""
        pool = self.pool(service_id)
        if len(subset) >= len(pool.members):
            raise SubsetTooLarge(f"k={len(subset)} pool={len(pool.members)}")
        if client in pool.assignments:
            return
        pool.assignments[client] = tuple(sorted(subset))

    def verify_key_use(
        self, service_id: str, client: str, used: str, subject: Optional[str] = None
    ) -> KeyUse:
        """Classify a key use; out-of-subset use is standalone compromise proof."""
        pool = self.pool(service_id)
        assigned = pool.assignments.get(client)
        if assigned is None:
            raise UnknownClient(client)
        if used in assigned:
            return KeyUse.LEGITIMATE
        who = subject if subject is not None else self._safe_subject(client)
        if self._evidence is not None:
            self._evidence.append(
                1, who, f"out-of-subset-key-use;service={service_id};client={client};used={used[:16]}"
            )
        return KeyUse.COMPROMISE_PROOF

    def _safe_subject(self, safe_id: str) -> str:
        safe = self._safes.get(safe_id)
        return safe.owner if safe is not None else safe_id

    def session_key(self, service_id: str, client: str) -> str:
        """Subset member used for a session: lowest hashcode, by convention."""
        pool = self.pool(service_id)
        assigned = pool.assignments.get(client)
        if assigned is None:
            raise UnknownClient(client)
        return assigned[0]

    # -- sealing ------------------------------------------------------------

    def seal(self, invoking_safe: str, handle: KeyHandle, payload: bytes) -> bytes:
        if handle.owner_safe != invoking_safe or handle.handle_id not in self.safe(invoking_safe).handles:
            raise WrongSafe(handle.handle_id)
        tag = self._tag(handle.key_hashcode, payload)
        return payload + tag.encode()

    def unseal(self, invoking_safe: str, handle: KeyHandle, blob: bytes) -> bytes:
        if handle.owner_safe != invoking_safe or handle.handle_id not in self.safe(invoking_safe).handles:
            raise WrongSafe(handle.handle_id)
        if len(blob) < _TAG_LEN:
            raise IntegrityFailure("blob too short")
        payload, tag = blob[:-_TAG_LEN], blob[-_TAG_LEN:]
        expected = self._tag(handle.key_hashcode, payload)
        if not hmac.compare_digest(tag, expected.encode()):
            raise IntegrityFailure("tag mismatch")
        return payload

    def verify_tag(self, key_hashcode: str, blob: bytes) -> Optional[bytes]:
        """Service-side check of a sealed blob; None when the tag fails."""
        if len(blob) < _TAG_LEN:
            return None
        payload, tag = blob[:-_TAG_LEN], blob[-_TAG_LEN:]
        if key_hashcode not in self._secrets:
            return None
        if not hmac.compare_digest(tag, self._tag(key_hashcode, payload).encode()):
            return None
        return payload

    def _tag(self, key_hashcode: str, payload: bytes) -> str:
        material = self._secrets[key_hashcode]
        return hmac.new(material, payload, sha256).hexdigest()
