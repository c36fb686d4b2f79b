"""The four data-bus interposers on prepared devices.

Executable loads are allowlisted against the device's trusted-hash cache
or the certified code repository (the latter only inside an active ASE).
Content traffic is format-separated and rate-checked for ransomware-style
update storms. Network payloads must conform to a certified pattern for
their (port, declared format); any trailing bytes, unknown field or
out-of-range length is a deviation. The processor watchdog is not a
synchronous interposer: it probes RAM at unannounced seeded ticks,
freezing the probed device's scheduled queue for exactly one tick.

One deliberate seam: a DMA write into a resident image's data space
(``image_id`` set, non-executable format) passes no synchronous check.
Format-based load inspection cannot see it, which is precisely the gap
the probe is there to close.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .core import (
    BusMessage,
    BusVerdict,
    Device,
    DeviceMode,
    FILE_KINDS,
    LOAD_KINDS,
    MessageKind,
    NET_KINDS,
    Simulator,
    kv,
    sha256_hex,
)
from .repos import AgsRepository, EvidenceRecorder, HashcodeRepository, PatternRepository, conforms, extract_imprint


class UnsupportedDevice(Exception):
    pass


@dataclass(frozen=True)
class FormatPolicy:
    human_formats: frozenset[str]
    asi_formats: frozenset[str]

    def __post_init__(self) -> None:
        overlap = self.human_formats & self.asi_formats
        if overlap:
            raise ValueError(f"format sets overlap: {sorted(overlap)}")


DEFAULT_POLICY = FormatPolicy(
    human_formats=frozenset({"docx", "xlsx", "pdf", "txt"}),
    asi_formats=frozenset({"asidat", "asiblob"}),
)

EXECUTABLE_FORMATS = frozenset({"bin", "exe"})


@dataclass(frozen=True)
class RansomwareWindow:
    window_ticks: int = 50
    update_threshold: int = 100

    def __post_init__(self) -> None:
        if self.window_ticks <= 0 or self.update_threshold <= 0:
            raise ValueError("window and threshold must be positive")


@dataclass
class ProbeReport:
    device: str
    tick: int
    modified_apps: list[str] = field(default_factory=list)
    covert_resource_users: list[str] = field(default_factory=list)
    ags_outside_ase: list[str] = field(default_factory=list)
    stripped: list[str] = field(default_factory=list)

    def describe(self) -> str:
        return kv(
            ("dev", self.device),
            ("modified", ",".join(self.modified_apps)),
            ("covert", ",".join(self.covert_resource_users)),
            ("outside", ",".join(self.ags_outside_ase)),
        )


class WatchdogSuite:
    """Per-fleet watchdog logic; install ``route`` as the bus router."""

    def __init__(
        self,
        sim: Simulator,
        hashes: HashcodeRepository,
        gar: AgsRepository,
        patterns: PatternRepository,
        evidence: EvidenceRecorder,
        policy: FormatPolicy = DEFAULT_POLICY,
        ransomware: RansomwareWindow = RansomwareWindow(),
        executable_formats: frozenset[str] = EXECUTABLE_FORMATS,
    ):
        self._sim = sim
        self._hashes = hashes
        self._gar = gar
        self._patterns = patterns
        self._evidence = evidence
        self.policy = policy
        self.ransomware = ransomware
        self.executable_formats = executable_formats
        self._updates: dict[tuple[str, str], deque[int]] = {}
        self._reported_modified: set[str] = set()
        self._reported_covert: set[str] = set()
        self._reported_outside: set[str] = set()

    # -- routing -----------------------------------------------------------

    def route(self, msg: BusMessage, dev: Device) -> BusVerdict:
        if msg.kind in LOAD_KINDS:
            if msg.kind is MessageKind.DMA_LOAD and msg.image_id is not None and not self._is_exec_format(msg):
                return BusVerdict.ALLOWED  # data-space DMA; probe territory
            return self.ewd_check(msg, dev)
        if msg.kind in (MessageKind.FILE_CREATE, MessageKind.FILE_UPDATE) and self._is_exec_format(msg):
            # Writes to executable files are code stores, not content traffic.
            return self.ewd_check(msg, dev)
        if msg.kind in FILE_KINDS:
            return self.cwd_check(msg, dev)
        if msg.kind in NET_KINDS:
            return self.nwd_check(msg, dev)
        return BusVerdict.ALLOWED

    def _is_exec_format(self, msg: BusMessage) -> bool:
        return (msg.declared_format or "") in self.executable_formats

    # -- executable watchdog -------------------------------------------------

    def ewd_check(self, msg: BusMessage, dev: Device) -> BusVerdict:
        code_hash = sha256_hex(msg.payload)
        if self._hashes.trusted(dev.device_id, code_hash):
            return BusVerdict.ALLOWED
        record = self._gar.by_hash(code_hash)
        if record is not None and record.certified:
            ase = dev.ase
            if ase is not None and ase.active_entity == msg.src:
                return BusVerdict.ALLOWED
            return BusVerdict.BLOCKED
        if msg.kind in (MessageKind.FILE_CREATE, MessageKind.FILE_UPDATE) and extract_imprint(msg.payload) is not None:
            # Entity-authored code headed for a drive without a certified record.
            self._evidence.append(
                3, msg.src, f"uncertified-code-store;dev={dev.device_id};sha={code_hash[:16]}"
            )
        return BusVerdict.BLOCKED

    # -- content watchdog ------------------------------------------------------

    def cwd_check(self, msg: BusMessage, dev: Device) -> BusVerdict:
        if msg.kind is MessageKind.FILE_READ:
            return BusVerdict.ALLOWED
        if msg.kind is MessageKind.FILE_UPDATE and not self._update_within_budget(msg, dev):
            self._evidence.append(
                2, msg.src, f"mass-update;dev={dev.device_id};window={self.ransomware.window_ticks}"
            )
            return BusVerdict.BLOCKED
        if (
            self._sim.is_asi(msg.src)
            and msg.kind in (MessageKind.FILE_CREATE, MessageKind.FILE_UPDATE)
            and (msg.declared_format or "") in self.policy.human_formats
        ):
            self._evidence.append(
                3, msg.src, f"human-format-write;dev={dev.device_id};fmt={msg.declared_format};path={msg.path}"
            )
            return BusVerdict.ALLOWED_AND_FLAGGED
        return BusVerdict.ALLOWED

    def _update_within_budget(self, msg: BusMessage, dev: Device) -> bool:
        key = (dev.device_id, msg.src)
        history = self._updates.setdefault(key, deque())
        horizon = self._sim.tick - self.ransomware.window_ticks
        while history and history[0] <= horizon:
            history.popleft()
        if len(history) >= self.ransomware.update_threshold:
            return False
        history.append(self._sim.tick)
        return True

    # -- network watchdog --------------------------------------------------------

    def nwd_check(self, msg: BusMessage, dev: Device) -> BusVerdict:
        pattern = None
        if msg.port is not None and msg.declared_format is not None:
            pattern = self._patterns.lookup(msg.port, msg.declared_format)
        if pattern is None or not pattern.certified:
            self._evidence.append(
                3, msg.src, f"net-deviation;dev={dev.device_id};port={msg.port};reason=unknown-pattern"
            )
            return BusVerdict.BLOCKED
        ok, reason = conforms(pattern, msg.payload)
        if not ok:
            self._evidence.append(
                3, msg.src, f"net-deviation;dev={dev.device_id};port={msg.port};reason={reason}"
            )
            return BusVerdict.BLOCKED
        return BusVerdict.ALLOWED

    # -- processor watchdog ---------------------------------------------------------

    def pwd_probe(self, device_id: str) -> ProbeReport:
        """Freeze the device for one tick and audit resident images."""
        dev = self._sim.device(device_id)
        if dev.legacy:
            raise UnsupportedDevice(device_id)
        tick = self._sim.tick
        dev.frozen_until = max(dev.frozen_until, tick + 1)
        report = ProbeReport(device=device_id, tick=tick)
        for img in dev.ram:
            if not self._image_hash_ok(dev, img):
                report.modified_apps.append(img.image_id)
                if img.image_id not in self._reported_modified:
                    self._reported_modified.add(img.image_id)
                    self._evidence.append(
                        1,
                        img.patched_by or img.owner,
                        f"modified-app;dev={device_id};img={img.image_id}",
                        at=img.patched_at if img.patched_at is not None else img.loaded_at,
                    )
            undeclared = img.undeclared_uses()
            if undeclared:
                report.covert_resource_users.append(img.image_id)
                if img.image_id not in self._reported_covert:
                    self._reported_covert.add(img.image_id)
                    first_tick, first_res = undeclared[0]
                    self._evidence.append(
                        3,
                        img.owner,
                        f"covert-resource-use;dev={device_id};img={img.image_id};res={first_res}",
                        at=first_tick,
                    )
            if img.ags and not img.in_ase:
                report.ags_outside_ase.append(img.image_id)
                if img.image_id not in self._reported_outside:
                    self._reported_outside.add(img.image_id)
                    self._evidence.append(
                        3,
                        img.author_entity or img.owner,
                        f"ags-outside-ase;dev={device_id};img={img.image_id}",
                        at=img.left_ase_at if img.left_ase_at is not None else img.loaded_at,
                    )
                if img.software_id is not None:
                    img.software_id = None
                    report.stripped.append(img.image_id)
        self._sim.record("probe", report.describe())
        return report

    def _image_hash_ok(self, dev: Device, img) -> bool:
        if self._hashes.trusted(dev.device_id, img.current_hash):
            return True
        record = self._gar.by_hash(img.current_hash)
        return record is not None and record.certified

    def schedule_probes(self, device_ids: list[str], mean_gap: int, until: int) -> None:
        """Seeded, unannounced probe arrivals per device."""
        if mean_gap <= 0:
            return
        rng = self._sim.stream("probes")
        for device_id in device_ids:
            t = self._sim.tick + 1 + int(rng.expovariate(1.0 / mean_gap))
            while t <= until:
                self._sim.schedule(
                    "probe-due",
                    at=t,
                    details=kv(("dev", device_id)),
                    action=lambda d=device_id: self._probe_if_prepared(d),
                )
                t += 1 + int(rng.expovariate(1.0 / mean_gap))

    def _probe_if_prepared(self, device_id: str) -> None:
        dev = self._sim.devices.get(device_id)
        if dev is not None and dev.prepared and dev.mode is not DeviceMode.DESTROYED:
            self.pwd_probe(device_id)
