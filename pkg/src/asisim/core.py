"""Seeded event loop, device fleet model and the data-bus message fabric.

Everything observable in a run flows through two structures defined here:
the tick-ordered event queue (scheduled work) and the bus (synchronous
storage/network/exec traffic). Both feed one canonical, replayable event
log. One tick equals one simulated millisecond.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

ZERO_DIGEST = "0" * 64


class SchedulingInPast(Exception):
    pass


class DeviceDestroyed(Exception):
    pass


class UnknownDevice(Exception):
    pass


class DuplicateDevice(Exception):
    pass


class BusVerdict(Enum):
    ALLOWED = "Allowed"
    BLOCKED = "Blocked"
    ALLOWED_AND_FLAGGED = "AllowedAndFlagged"


class DeviceMode(Enum):
    NORMAL = "Normal"
    SAFE_MODE = "SafeMode"
    HONEYPOT = "Honeypot"
    DESTROYED = "Destroyed"


class MessageKind(Enum):
    EXEC_LOAD = "ExecLoad"
    FILE_CREATE = "FileCreate"
    FILE_READ = "FileRead"
    FILE_UPDATE = "FileUpdate"
    FILE_DELETE = "FileDelete"
    NET_SEND = "NetSend"
    NET_RECV = "NetRecv"
    DMA_LOAD = "DmaLoad"

FILE_KINDS = frozenset(
    {MessageKind.FILE_CREATE, MessageKind.FILE_READ, MessageKind.FILE_UPDATE, MessageKind.FILE_DELETE}
)
NET_KINDS = frozenset({MessageKind.NET_SEND, MessageKind.NET_RECV})
LOAD_KINDS = frozenset({MessageKind.EXEC_LOAD, MessageKind.DMA_LOAD})


class ActorKind(Enum):
    HUMAN = "human"
    ASI = "asi"
    SYSTEM = "system"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canon(value: object) -> str:
    """Render a value for a canonical log detail field (no tabs/newlines/;)."""
    text = str(value)
    for bad, repl in (("\t", " "), ("\n", " "), ("\r", " "), (";", ",")):
        text = text.replace(bad, repl)
    return text


def kv(*pairs: tuple[str, object]) -> str:
    """Canonical key=value;... detail string, field order as given."""
    return ";".join(f"{k}={canon(v)}" for k, v in pairs)


def parse_kv(details: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in details.split(";"):
        if "=" in part:
            k, _, v = part.partition("=")
            out[k] = v
    return out


@dataclass(frozen=True)
class EventRecord:
    tick: int
    seq: int
    kind: str
    details: str

    def line(self) -> str:
        return f"{self.tick}\t{self.seq}\t{self.kind}\t{self.details}"


def serialize_log(records: Iterable[EventRecord]) -> str:
    return "".join(r.line() + "\n" for r in records)


@dataclass
class FileObject:
    path: str
    content: bytes
    format_tag: str
    owner: str
    created_at: int
    updated_at: int

    def fingerprint(self) -> str:
        return kv(
            ("path", self.path),
            ("sha", sha256_hex(self.content)),
            ("fmt", self.format_tag),
            ("owner", self.owner),
        )


@dataclass
class ExecutableImage:
    image_id: str
    device_id: str
    owner: str
    original_hash: str
    current_hash: str
    manifest: frozenset[str]
    loaded_at: int
    ags: bool = False
    software_id: Optional[str] = None
    author_entity: Optional[str] = None
    in_ase: bool = False
    left_ase_at: Optional[int] = None
    used_resources: list[tuple[int, str]] = field(default_factory=list)
    patched_by: Optional[str] = None
    patched_at: Optional[int] = None

    def undeclared_uses(self) -> list[tuple[int, str]]:
        return [(t, r) for t, r in self.used_resources if r not in self.manifest]


@dataclass
class AseContext:
    device_id: str
    active_entity: Optional[str] = None
    loaded_ags: set[str] = field(default_factory=set)


@dataclass
class Device:
    device_id: str
    prepared: bool
    mode: DeviceMode = DeviceMode.NORMAL
    storage: dict[str, FileObject] = field(default_factory=dict)
    quarantine: dict[str, FileObject] = field(default_factory=dict)
    ram: list[ExecutableImage] = field(default_factory=list)
    net_ports: set[int] = field(default_factory=set)
    ase: Optional[AseContext] = None
    frozen_until: int = 0
    carried_asi_data: bool = False

    @property
    def legacy(self) -> bool:
        return not self.prepared

    def image(self, image_id: str) -> Optional[ExecutableImage]:
        for img in self.ram:
            if img.image_id == image_id:
                return img
        return None


@dataclass
class BusMessage:
    src: str
    device: str
    kind: MessageKind
    payload: bytes = b""
    declared_format: Optional[str] = None
    port: Optional[int] = None
    path: Optional[str] = None
    image_id: Optional[str] = None
    manifest: tuple[str, ...] = ()

    def describe(self) -> str:
        parts: list[tuple[str, object]] = [("src", self.src), ("dev", self.device), ("kind", self.kind.value)]
        if self.path is not None:
            parts.append(("path", self.path))
        if self.port is not None:
            parts.append(("port", self.port))
        if self.declared_format is not None:
            parts.append(("fmt", self.declared_format))
        if self.image_id is not None:
            parts.append(("img", self.image_id))
        parts.append(("sha", sha256_hex(self.payload)))
        return kv(*parts)


@dataclass
class ImageMeta:
    """Code identity as known to the trust services, keyed by content hash."""

    ags: bool = False
    software_id: Optional[str] = None
    author_entity: Optional[str] = None


# Hook signatures installed by other modules at assembly time.
ModeGate = Callable[["Simulator", BusMessage, Device], Optional[tuple[BusVerdict, bool]]]
WatchdogRouter = Callable[[BusMessage, Device], BusVerdict]
CodeInfo = Callable[[str], Optional[ImageMeta]]


@dataclass
class _Scheduled:
    at: int
    order: int
    kind: str
    details: str
    action: Optional[Callable[[], None]]
    device: Optional[str]


class Simulator:
    """Single-threaded, seed-deterministic event loop over a device fleet.

    All randomness in a run comes from named substreams derived from the
    one master seed, so replays are byte-identical and substream consumers
    cannot perturb each other's draws.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.tick = 0
        self._next_seq = 0
        self._next_order = 0
        self._next_image = 0
        self._queue: list[tuple[int, int, _Scheduled]] = []
        self._streams: dict[str, random.Random] = {}
        self.log: list[EventRecord] = []
        self.devices: dict[str, Device] = {}
        self.actors: dict[str, ActorKind] = {}
        self.quotas: dict[str, int] = {}
        self._quota_spent: dict[str, tuple[int, int]] = {}
        self.mode_gate: Optional[ModeGate] = None
        self.watchdog_router: Optional[WatchdogRouter] = None
        self.code_info: Optional[CodeInfo] = None

    # -- randomness ------------------------------------------------------

    def stream(self, name: str) -> random.Random:
        """Named substream; derivation depends only on (seed, name)."""
        rng = self._streams.get(name)
        if rng is None:
            material = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
            rng = random.Random(int.from_bytes(material, "big"))
            self._streams[name] = rng
        return rng

    # -- fleet -----------------------------------------------------------

    def add_device(self, device_id: str, prepared: bool, ports: Iterable[int] = ()) -> Device:
        if device_id in self.devices:
            raise DuplicateDevice(device_id)
        dev = Device(device_id=device_id, prepared=prepared, net_ports=set(ports))
        self.devices[device_id] = dev
        self.record("device", kv(("id", device_id), ("prepared", int(prepared))))
        return dev

    def device(self, device_id: str) -> Device:
        try:
            return self.devices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def add_actor(self, actor_id: str, kind: ActorKind) -> None:
        self.actors[actor_id] = kind

    def actor_kind(self, actor_id: str) -> ActorKind:
        return self.actors.get(actor_id, ActorKind.SYSTEM)

    def is_asi(self, actor_id: str) -> bool:
        return self.actor_kind(actor_id) is ActorKind.ASI

    # -- log -------------------------------------------------------------

    def record(self, kind: str, details: str) -> EventRecord:
        rec = EventRecord(tick=self.tick, seq=self._next_seq, kind=kind, details=details)
        self._next_seq += 1
        self.log.append(rec)
        return rec

    # -- scheduling ------------------------------------------------------

    def schedule(
        self,
        kind: str,
        at: int,
        details: str = "",
        action: Optional[Callable[[], None]] = None,
        device: Optional[str] = None,
    ) -> None:
        """Enqueue an event; same-tick events fire in insertion order."""
        if at < self.tick:
            raise SchedulingInPast(f"at={at} current={self.tick}")
        entry = _Scheduled(at=at, order=self._next_order, kind=kind, details=details, action=action, device=device)
        self._next_order += 1
        heapq.heappush(self._queue, (entry.at, entry.order, entry))

    def step(self) -> list[EventRecord]:
        """Process the current tick, then advance the clock by one.

        Returns every record appended while the tick was processed, in
        canonical (tick, seq) order.
        """
        t = self.tick
        first = len(self.log)
        while self._queue and self._queue[0][0] == t:
            _, _, entry = heapq.heappop(self._queue)
            if entry.device is not None:
                dev = self.devices.get(entry.device)
                if dev is not None and dev.frozen_until > t:
                    # Probe freeze: the device's pending queue slips, order kept.
                    entry.at = dev.frozen_until
                    entry.order = self._next_order
                    self._next_order += 1
                    heapq.heappush(self._queue, (entry.at, entry.order, entry))
                    continue
            self.record(entry.kind, entry.details)
            if entry.action is not None:
                entry.action()
        fired = self.log[first:]
        self.tick = t + 1
        return fired

    def run_until(self, end_tick: int) -> None:
        """Process every tick through end_tick, skipping empty stretches."""
        while self._queue and self._queue[0][0] <= end_tick:
            self.tick = max(self.tick, self._queue[0][0])
            self.step()
        self.tick = max(self.tick, end_tick + 1)

    # -- bus -------------------------------------------------------------

    def submit_bus(self, msg: BusMessage) -> BusVerdict:
        """Route one storage/network/exec action through the device.

        Prepared devices get the installed mode gate and watchdog chain;
        legacy devices pass traffic unchecked. State effects apply only
        when the final verdict is not Blocked.
        """
        dev = self.device(msg.device)
        if dev.mode is DeviceMode.DESTROYED:
            raise DeviceDestroyed(msg.device)

        verdict = BusVerdict.ALLOWED
        apply_effects = True
        if not self._within_quota(msg.src):
            verdict = BusVerdict.BLOCKED
        elif dev.prepared:
            gated = self.mode_gate(self, msg, dev) if self.mode_gate else None
            if gated is not None:
                verdict, apply_effects = gated
            elif self.watchdog_router is not None:
                verdict = self.watchdog_router(msg, dev)

        if verdict is not BusVerdict.BLOCKED and apply_effects:
            self._apply_effects(msg, dev)
        self.record(
            "bus",
            kv(("prep", int(dev.prepared)), ("akind", self.actor_kind(msg.src).value))
            + ";"
            + msg.describe()
            + ";"
            + kv(("verdict", verdict.value)),
        )
        return verdict

    def _within_quota(self, actor_id: str) -> bool:
        limit = self.quotas.get(actor_id)
        if limit is None:
            return True
        tick_seen, spent = self._quota_spent.get(actor_id, (-1, 0))
        if tick_seen != self.tick:
            spent = 0
        if spent >= limit:
            return False
        self._quota_spent[actor_id] = (self.tick, spent + 1)
        return True

    def _apply_effects(self, msg: BusMessage, dev: Device) -> None:
        asi = self.is_asi(msg.src)
        if msg.kind is MessageKind.FILE_CREATE or msg.kind is MessageKind.FILE_UPDATE:
            assert msg.path is not None
            existing = dev.storage.get(msg.path)
            if existing is None:
                dev.storage[msg.path] = FileObject(
                    path=msg.path,
                    content=msg.payload,
                    format_tag=msg.declared_format or "",
                    owner=msg.src,
                    created_at=self.tick,
                    updated_at=self.tick,
                )
            else:
                existing.content = msg.payload
                existing.updated_at = self.tick
            if asi and dev.legacy:
                dev.carried_asi_data = True
        elif msg.kind is MessageKind.FILE_DELETE:
            if msg.path is not None:
                dev.storage.pop(msg.path, None)
        elif msg.kind in LOAD_KINDS:
            if msg.kind is MessageKind.DMA_LOAD and msg.image_id is not None:
                # In-place write into a resident image's memory.
                img = dev.image(msg.image_id)
                if img is not None:
                    img.current_hash = sha256_hex(bytes.fromhex(img.current_hash) + msg.payload)
                    img.patched_by = msg.src
                    img.patched_at = self.tick
            else:
                self._load_image(msg, dev)
            if asi and dev.legacy:
                dev.carried_asi_data = True
        if msg.image_id is not None and msg.kind in (NET_KINDS | FILE_KINDS):
            img = dev.image(msg.image_id)
            if img is not None:
                if msg.kind in NET_KINDS:
                    img.used_resources.append((self.tick, f"net:{msg.port}"))
                else:
                    img.used_resources.append((self.tick, f"storage:{msg.path}"))

    def _load_image(self, msg: BusMessage, dev: Device) -> None:
        code_hash = sha256_hex(msg.payload)
        meta = self.code_info(code_hash) if self.code_info else None
        meta = meta or ImageMeta()
        image_id = f"img-{self._next_image:04d}"
        self._next_image += 1
        in_ase = bool(meta.ags and dev.ase is not None and dev.ase.active_entity == msg.src)
        img = ExecutableImage(
            image_id=image_id,
            device_id=dev.device_id,
            owner=msg.src,
            original_hash=code_hash,
            current_hash=code_hash,
            manifest=frozenset(msg.manifest),
            loaded_at=self.tick,
            ags=meta.ags,
            software_id=meta.software_id,
            author_entity=meta.author_entity,
            in_ase=in_ase,
        )
        dev.ram.append(img)
        if in_ase and dev.ase is not None:
            dev.ase.loaded_ags.add(code_hash)
