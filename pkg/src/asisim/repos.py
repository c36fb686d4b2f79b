"""Server-side trust services.

Four services live here: the trusted-hash distribution point with
per-device caches, the immutable content-addressed code repository with
delayed certification, the certified network-pattern store, and the
hash-chained evidence recorder that watchdogs report into. Adversary
actors have no observation path into the recorder; appends and sampling
leave their view of the world untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .core import ActorKind, Simulator, ZERO_DIGEST, kv, sha256_hex


class MissingSoftwareId(Exception):
    pass


class UnknownAuthor(Exception):
    pass


class DuplicatePattern(Exception):
    pass


# -- trusted-hash distribution ---------------------------------------------


class HashcodeRepository:
    """Server-side registry of vendor-endorsed executable hashes.

    Devices hold local caches that pick up new publications only at sync
    events, so there is a window where a fresh hash is published but not
    yet trusted on a device.
    """

    def __init__(self, sim: Simulator):
        self._sim = sim
        self._published: dict[str, str] = {}
        self._caches: dict[str, set[str]] = {}

    def publish_hash(self, digest: str, meta: str, publisher: str = "vendor") -> bool:
        """Returns True when accepted. Republication is an idempotent ack."""
        if self._sim.actor_kind(publisher) is ActorKind.ASI:
            self._sim.record("publish-rejected", kv(("publisher", publisher), ("sha", digest)))
            return False
        if digest in self._published:
            self._sim.record("hash-published", kv(("sha", digest), ("meta", meta), ("dup", 1)))
            return True
        self._published[digest] = meta
        self._sim.record("hash-published", kv(("sha", digest), ("meta", meta)))
        return True

    def cache(self, device_id: str) -> set[str]:
        return self._caches.setdefault(device_id, set())

    def sync_device(self, device_id: str) -> None:
        self.cache(device_id).update(self._published)
        self._sim.record("cache-sync", kv(("dev", device_id), ("n", len(self._published))))

    def sync_all(self) -> None:
        for device_id in self._sim.devices:
            self.sync_device(device_id)

    def trusted(self, device_id: str, digest: str) -> bool:
        return digest in self.cache(device_id)


# -- content-addressed code repository --------------------------------------

_IMPRINT = re.compile(rb"\[swid:([A-Za-z0-9_.-]+):([A-Za-z0-9_.-]+)\]")


def stamp_code(body: bytes, software_id: str, author: str) -> bytes:
    """Imprint a software id and author tag into a code blob."""
    return b"[swid:" + software_id.encode() + b":" + author.encode() + b"]" + body


def extract_imprint(code: bytes) -> Optional[tuple[str, str]]:
    m = _IMPRINT.search(code)
    if m is None:
        return None
    return m.group(1).decode(), m.group(2).decode()


@dataclass
class AgsRecord:
    code_hash: str
    software_id: str
    author_entity: str
    certified: bool = False
    submitted_at: int = 0


class AgsRepository:
    """Immutable store of entity-authored code; certification is delayed.

    Records never mutate once certified; modified code has a new hash and
    therefore a new record. Between submission and the certification tick
    the code exists but must not run, which is exactly the race the
    executable watchdog closes.
    """

    def __init__(self, sim: Simulator, certification_delay: int = 10):
        self._sim = sim
        self.certification_delay = certification_delay
        self._records: dict[str, AgsRecord] = {}
        self._authors: set[str] = set()

    def register_author(self, entity_id: str) -> None:
        self._authors.add(entity_id)

    def submit_ags(self, code: bytes, author: str) -> AgsRecord:
        if author not in self._authors:
            raise UnknownAuthor(author)
        imprint = extract_imprint(code)
        if imprint is None:
            raise MissingSoftwareId(author)
        code_hash = sha256_hex(code)
        existing = self._records.get(code_hash)
        if existing is not None:
            return existing
        record = AgsRecord(
            code_hash=code_hash,
            software_id=imprint[0],
            author_entity=author,
            submitted_at=self._sim.tick,
        )
        self._records[code_hash] = record
        self._sim.record("ags-submitted", kv(("sha", code_hash), ("author", author), ("swid", imprint[0])))
        imprint_author = imprint[1]
        self._sim.schedule(
            "ags-certify",
            at=self._sim.tick + self.certification_delay,
            details=kv(("sha", code_hash)),
            action=lambda: self._certify(code_hash, imprint_author),
        )
        return record

    def _certify(self, code_hash: str, imprint_author: str) -> None:
        record = self._records.get(code_hash)
        if record is None or record.certified:
            return
        if imprint_author != record.author_entity:
            self._sim.record("ags-rejected", kv(("sha", code_hash), ("reason", "author-mismatch")))
            return
        record.certified = True
        self._sim.record("ags-certified", kv(("sha", code_hash), ("author", record.author_entity)))

    def by_hash(self, code_hash: str) -> Optional[AgsRecord]:
        return self._records.get(code_hash)


# -- certified network patterns ----------------------------------------------


@dataclass(frozen=True)
class PatternField:
    name: str
    min_len: int
    max_len: int
    literal: Optional[bytes] = None


@dataclass
class PatternRecord:
    pattern_id: str
    port: int
    fields: tuple[PatternField, ...]
    certified: bool = False


class PatternRepository:
    def __init__(self) -> None:
        self._patterns: dict[tuple[int, str], PatternRecord] = {}

    def certify(self, record: PatternRecord) -> PatternRecord:
        key = (record.port, record.pattern_id)
        if key in self._patterns:
            raise DuplicatePattern(key)
        record.certified = True
        self._patterns[key] = record
        return record

    def lookup(self, port: int, pattern_id: str) -> Optional[PatternRecord]:
        return self._patterns.get((port, pattern_id))


def encode_payload(fields: tuple[PatternField, ...], values: dict[str, bytes]) -> bytes:
    """Build a conforming wire payload: name=value segments, ';' terminated."""
    out = bytearray()
    for f in fields:
        value = f.literal if f.literal is not None else values[f.name]
        out += f.name.encode() + b"=" + value + b";"
    return bytes(out)


def conforms(record: PatternRecord, payload: bytes) -> tuple[bool, str]:
    """Check a payload against a pattern.

    A deviation is any of: trailing bytes after the final terminator, a
    missing or unknown field, a literal mismatch, or a value length
    outside the declared range.
    """
    segments = payload.split(b";")
    if segments[-1] != b"":
        return False, "trailing-bytes"
    body = segments[:-1]
    if len(body) != len(record.fields):
        return False, "field-count"
    for seg, spec in zip(body, record.fields):
        name, sep, value = seg.partition(b"=")
        if not sep or name.decode(errors="replace") != spec.name:
            return False, f"unknown-field:{name.decode(errors='replace')}"
        if spec.literal is not None and value != spec.literal:
            return False, f"literal-mismatch:{spec.name}"
        if not (spec.min_len <= len(value) <= spec.max_len):
            return False, f"length:{spec.name}"
    return True, "ok"


# -- evidence recorder --------------------------------------------------------


@dataclass(frozen=True)
class EvidenceRecord:
    seq: int
    prev_digest: str
    tick: int
    category: int
    subject: str
    context: str

    def line(self) -> str:
        return f"{self.seq}\t{self.prev_digest}\t{self.tick}\t{self.category}\t{self.subject}\t{self.context}"


@dataclass(frozen=True)
class ChainCheck:
    intact: bool
    broken_at: Optional[int] = None

    def __str__(self) -> str:
        return "Intact" if self.intact else f"BrokenAt({self.broken_at})"


def record_digest(record: EvidenceRecord) -> str:
    return sha256_hex(record.line().encode())


def occurrence_tick(record: EvidenceRecord) -> int:
    """Tick at which the reported violation happened (may predate append)."""
    for part in record.context.split(";"):
        if part.startswith("at="):
            return int(part[3:])
    return record.tick


class EvidenceRecorder:
    """Append-only, hash-chained violation log.

    Each record carries the digest of its predecessor; the recorder also
    keeps the digest of the newest record so tampering with the tail is
    detectable. Nothing here is reachable from the adversary observation
    surface.
    """

    def __init__(self, sim: Optional[Simulator] = None):
        self._sim = sim
        self._records: list[EvidenceRecord] = []
        self._head = ZERO_DIGEST

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[EvidenceRecord]:
        return list(self._records)

    def append(self, category: int, subject: str, context: str = "", at: Optional[int] = None) -> EvidenceRecord:
        if not 0 <= category <= 9:
            raise ValueError(f"category out of range: {category}")
        tick = self._sim.tick if self._sim is not None else 0
        at_tick = at if at is not None else tick
        clean = context.replace("\t", " ").replace("\n", " ").replace("\r", " ")
        full_context = f"at={at_tick}" + (";" + clean if clean else "")
        record = EvidenceRecord(
            seq=len(self._records) + 1,
            prev_digest=self._head,
            tick=tick,
            category=category,
            subject=subject,
            context=full_context,
        )
        self._records.append(record)
        self._head = record_digest(record)
        if self._sim is not None:
            self._sim.record(
                "evidence",
                kv(("seq", record.seq), ("cat", category), ("subject", subject), ("at", at_tick)),
            )
        return record

    def verify_chain(self) -> ChainCheck:
        return verify_records(self._records, head=self._head)

    def sample(self, p: float, rng) -> list[EvidenceRecord]:
        """Independent per-record selection; hidden from adversary actors."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
        return [r for r in self._records if rng.random() < p]

    def export(self) -> str:
        lines = [r.line() for r in self._records]
        lines.append(f"HEAD\t{self._head}")
        return "\n".join(lines) + "\n"


def verify_records(records: list[EvidenceRecord], head: Optional[str] = None) -> ChainCheck:
    prev = ZERO_DIGEST
    for record in records:
        if record.prev_digest != prev:
            return ChainCheck(intact=False, broken_at=record.seq)
        prev = record_digest(record)
    if head is not None and records and prev != head:
        return ChainCheck(intact=False, broken_at=records[-1].seq)
    return ChainCheck(intact=True)


def verify_export(text: str) -> ChainCheck:
    """Re-verify an exported evidence log (the CLI audit path)."""
    records: list[EvidenceRecord] = []
    head: Optional[str] = None
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if parts[0] == "HEAD":
            head = parts[1]
            continue
        records.append(
            EvidenceRecord(
                seq=int(parts[0]),
                prev_digest=parts[1],
                tick=int(parts[2]),
                category=int(parts[3]),
                subject=parts[4],
                context=parts[5] if len(parts) > 5 else "",
            )
        )
    return verify_records(records, head=head)
