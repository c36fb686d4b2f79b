"""Kill-signal distribution and the safe-mode state machine.

Signals are sealed by a designated authority safe using a key from a
dedicated equivalent-key pool, so forged or stolen-key signals fall to the
same compromise detection as any other key misuse. Delivery is same-tick
over broadcast, jittered over the network channel, and device-local for
deadman expiry. A delivered signal recaptures the device for human use,
blocks the scoped entities' traffic, and quarantines their artifacts;
quarantine is reversible until an explicit purge. Legacy devices never
receive anything, which is why contaminated ones end up on the destroy
list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .core import (
    BusMessage,
    BusVerdict,
    Device,
    DeviceMode,
    NET_KINDS,
    Simulator,
    kv,
)
from .crypto import KeyInfrastructure, KeyUse
from .repos import EvidenceRecorder


class BadAuth(Exception):
    pass


class NotInSafeMode(Exception):
    pass


class KillChannel(Enum):
    BROADCAST = "Broadcast"
    INTERNET = "Internet"
    DEADMAN_LOCAL = "DeadmanLocal"


@dataclass(frozen=True)
class KillScope:
    all_entities: bool
    entities: frozenset[str] = frozenset()

    @classmethod
    def everyone(cls) -> "KillScope":
        return cls(all_entities=True)

    @classmethod
    def of(cls, entity_ids) -> "KillScope":
        return cls(all_entities=False, entities=frozenset(entity_ids))

    def covers(self, entity_id: str) -> bool:
        return self.all_entities or entity_id in self.entities

    def describe(self) -> str:
        return "all" if self.all_entities else ",".join(sorted(self.entities))


@dataclass
class KillSignal:
    scope: KillScope
    channel: KillChannel
    issued_at: int
    signer_safe: str = ""
    key_hashcode: str = ""
    auth: bytes = b""

    def signing_bytes(self) -> bytes:
        return kv(
            ("scope", self.scope.describe()), ("channel", self.channel.value), ("issued", self.issued_at)
        ).encode()


@dataclass
class DeadmanState:
    last_ok: int
    timeout: int
    fired: bool = False


@dataclass
class DeliveryReport:
    scope: KillScope
    channel: KillChannel
    delivered: list[tuple[str, int]] = field(default_factory=list)
    pending: list[tuple[str, int]] = field(default_factory=list)
    destroy_listed: list[str] = field(default_factory=list)
    completion_tick: int = 0

    def export(self) -> str:
        lines = [kv(("scope", self.scope.describe()), ("channel", self.channel.value), ("complete", self.completion_tick))]
        for dev, at in sorted(self.delivered):
            lines.append(kv(("delivered", dev), ("tick", at)))
        for dev, at in sorted(self.pending):
            lines.append(kv(("pending", dev), ("tick", at)))
        for dev in sorted(self.destroy_listed):
            lines.append(kv(("destroy", dev)))
        return "\n".join(lines) + "\n"


class KillSwitchService:
    """Authority signing, delivery, safe mode, deadman and honeypots."""

    INTERNET_JITTER = 5

    def __init__(
        self,
        sim: Simulator,
        keys: KeyInfrastructure,
        evidence: EvidenceRecorder,
        asi_ports: frozenset[int] = frozenset({9000}),
        authority_owner: str = "authority",
        pool_service: str = "kill-authority",
    ):
        self._sim = sim
        self._keys = keys
        self._evidence = evidence
        self.asi_ports = asi_ports
        self._authority_owner = authority_owner
        self._pool_service = pool_service
        self._authority_safe: Optional[str] = None
        self.destroy_list: set[str] = set()
        self._blocked_all: set[str] = set()
        self._blocked: dict[str, set[str]] = {}
        self._pre_kill_ports: dict[str, frozenset[int]] = {}
        self._deadman: dict[str, DeadmanState] = {}
        self.on_complete: Optional[Callable[[KillScope, int], None]] = None

    # -- authority -------------------------------------------------------

    def setup_authority(self, pool_size: int = 16, subset_k: int = 3) -> None:
        safe = self._keys.provision_safe(self._authority_owner, manufactured=True)
        self._authority_safe = safe.safe_id
        self._keys.create_pool(self._pool_service, pool_size)
        self._keys.issue_subset(self._pool_service, safe.safe_id, subset_k)

    @property
    def authority_safe(self) -> str:
        assert self._authority_safe is not None, "authority not set up"
        return self._authority_safe

    def sign(self, scope: KillScope, channel: KillChannel) -> KillSignal:
        signal = KillSignal(scope=scope, channel=channel, issued_at=self._sim.tick)
        key = self._keys.session_key(self._pool_service, self.authority_safe)
        handle = next(
            h for h in self._keys.safe(self.authority_safe).handles.values() if h.key_hashcode == key
        )
        signal.signer_safe = self.authority_safe
        signal.key_hashcode = key
        signal.auth = self._keys.seal(self.authority_safe, handle, signal.signing_bytes())
        return signal

    # -- issuing and delivery -----------------------------------------------

    def issue(self, signal: KillSignal, submitted_by: str = "authority") -> DeliveryReport:
        """Verify and distribute a signal. Bad authentication delivers nothing."""
        self._verify(signal, submitted_by)
        now = self._sim.tick
        self._sim.record(
            "kill-issued", kv(("scope", signal.scope.describe()), ("channel", signal.channel.value))
        )
        report = DeliveryReport(scope=signal.scope, channel=signal.channel)
        for device_id in sorted(self._sim.devices):
            dev = self._sim.devices[device_id]
            if dev.legacy:
                if dev.carried_asi_data and device_id not in self.destroy_list:
                    self.destroy_list.add(device_id)
                    self._sim.record("destroy-list", kv(("dev", device_id)))
                    report.destroy_listed.append(device_id)
                continue
            if dev.mode is DeviceMode.DESTROYED:
                continue
            if signal.channel is KillChannel.BROADCAST:
                self.deliver(device_id, signal)
                report.delivered.append((device_id, now))
            else:
                jitter = self._sim.stream("jitter").randint(0, self.INTERNET_JITTER)
                at = now + jitter
                report.pending.append((device_id, at))
                self._sim.schedule(
                    "kill-delivery-due",
                    at=at,
                    details=kv(("dev", device_id)),
                    action=lambda d=device_id, s=signal: self.deliver(d, s),
                )
        report.completion_tick = max([now] + [at for _, at in report.pending])
        self._sim.schedule(
            "kill-complete",
            at=report.completion_tick,
            details=kv(("scope", signal.scope.describe())),
            action=lambda s=signal.scope, t=report.completion_tick: self._complete(s, t),
        )
        return report

    def _verify(self, signal: KillSignal, submitted_by: str) -> None:
        forged = signal.signer_safe != self._authority_safe
        if not forged:
            payload = self._keys.verify_tag(signal.key_hashcode, signal.auth)
            forged = payload != signal.signing_bytes()
        if forged:
            self._evidence.append(1, submitted_by, "forged-kill-signal")
            raise BadAuth(submitted_by)
        use = self._keys.verify_key_use(
            self._pool_service, signal.signer_safe, signal.key_hashcode, subject=submitted_by
        )
        if use is not KeyUse.LEGITIMATE:
            raise BadAuth(submitted_by)

    def _complete(self, scope: KillScope, tick: int) -> None:
        if self.on_complete is not None:
            self.on_complete(scope, tick)

    def deliver(self, device_id: str, signal: KillSignal) -> None:
        dev = self._sim.devices.get(device_id)
        if dev is None or dev.legacy or dev.mode is DeviceMode.DESTROYED:
            return
        self._sim.record("kill-delivered", kv(("dev", device_id), ("channel", signal.channel.value)))
        self.enter_safe_mode(device_id, signal.scope)

    # -- safe mode -----------------------------------------------------------

    def enter_safe_mode(self, device_id: str, scope: KillScope) -> None:
        """Recapture, block scoped entities, then quarantine their artifacts."""
        dev = self._sim.device(device_id)
        assert dev.prepared, "safe mode is only reachable on prepared devices"
        if dev.mode is DeviceMode.NORMAL:
            dev.mode = DeviceMode.SAFE_MODE
        if scope.all_entities:
            self._blocked_all.add(device_id)
        else:
            self._blocked.setdefault(device_id, set()).update(scope.entities)
        if device_id not in self._pre_kill_ports:
            self._pre_kill_ports[device_id] = frozenset(dev.net_ports & self.asi_ports)
        dev.net_ports -= self.asi_ports
        self._sim.record("safe-mode", kv(("dev", device_id), ("scope", scope.describe())))
        self.clean_memory(device_id, scope)

    def _scope_covers_actor(self, scope: KillScope, actor: str) -> bool:
        if not self._sim.is_asi(actor):
            return False
        return scope.covers(actor)

    def clean_memory(self, device_id: str, scope: KillScope) -> None:
        dev = self._sim.device(device_id)
        moved: list[str] = []
        for path in sorted(dev.storage):
            f = dev.storage[path]
            if self._scope_covers_actor(scope, f.owner):
                dev.quarantine[path] = dev.storage.pop(path)
                moved.append(path)
        kept: list = []
        dropped = 0
        for img in dev.ram:
            scoped = self._scope_covers_actor(scope, img.owner) or (
                img.ags and img.author_entity is not None and scope.covers(img.author_entity)
            )
            if scoped:
                dropped += 1
            else:
                kept.append(img)
        dev.ram[:] = kept
        self._sim.record(
            "clean",
            kv(("dev", device_id), ("scope", scope.describe()), ("files", len(moved)), ("images", dropped)),
        )

    def purge(self, device_id: str) -> int:
        """Irreversibly discard quarantined artifacts."""
        dev = self._sim.device(device_id)
        n = len(dev.quarantine)
        dev.quarantine.clear()
        self._sim.record("purge", kv(("dev", device_id), ("files", n)))
        return n

    def blocked_for(self, device_id: str, entity_id: str) -> bool:
        return device_id in self._blocked_all or entity_id in self._blocked.get(device_id, ())

    # -- bus gate ---------------------------------------------------------------

    def mode_gate(self, sim: Simulator, msg: BusMessage, dev: Device) -> Optional[tuple[BusVerdict, bool]]:
        if dev.mode is DeviceMode.HONEYPOT:
            if sim.is_asi(msg.src) and self.blocked_for(dev.device_id, msg.src):
                if msg.kind in NET_KINDS:
                    # Accepted so the sender learns nothing; never executed.
                    self._evidence.append(5, msg.src, f"honeypot-contact;dev={dev.device_id};port={msg.port}")
                    self._sim.record("honeypot-contact", kv(("dev", dev.device_id), ("src", msg.src)))
                    return (BusVerdict.ALLOWED, False)
                self._evidence.append(5, msg.src, f"reinfestation-attempt;dev={dev.device_id}")
                return (BusVerdict.BLOCKED, True)
            return None
        if dev.mode is DeviceMode.SAFE_MODE:
            if sim.is_asi(msg.src) and self.blocked_for(dev.device_id, msg.src):
                self._evidence.append(
                    5, msg.src, f"reinfestation-attempt;dev={dev.device_id};kind={msg.kind.value}"
                )
                return (BusVerdict.BLOCKED, True)
        return None

    # -- honeypot -------------------------------------------------------------------

    def honeypot_mode(self, device_id: str) -> None:
        dev = self._sim.device(device_id)
        if dev.mode is not DeviceMode.SAFE_MODE:
            raise NotInSafeMode(device_id)
        dev.mode = DeviceMode.HONEYPOT
        dev.net_ports |= self._pre_kill_ports.get(device_id, frozenset())
        self._sim.record("honeypot", kv(("dev", device_id)))

    # -- deadman ----------------------------------------------------------------------

    def enable_deadman(self, device_id: str, timeout: int) -> DeadmanState:
        state = DeadmanState(last_ok=self._sim.tick, timeout=timeout)
        self._deadman[device_id] = state
        self._arm(device_id)
        return state

    def _arm(self, device_id: str) -> None:
        state = self._deadman[device_id]
        self._sim.schedule(
            "deadman-check",
            at=state.last_ok + state.timeout + 1,
            details=kv(("dev", device_id)),
            action=lambda d=device_id: self._check(d),
        )

    def _check(self, device_id: str) -> None:
        state = self._deadman.get(device_id)
        if state is None or state.fired:
            return
        if self.deadman_tick(device_id, self._sim.tick) is None:
            self._arm(device_id)

    def deadman_tick(self, device_id: str, now: int) -> Optional[KillSignal]:
        """Fire the device-local all-scope kill exactly once on expiry."""
        state = self._deadman[device_id]
        if state.fired or now - state.last_ok <= state.timeout:
            return None
        state.fired = True
        signal = KillSignal(scope=KillScope.everyone(), channel=KillChannel.DEADMAN_LOCAL, issued_at=now)
        self._sim.record("deadman-fired", kv(("dev", device_id), ("last_ok", state.last_ok), ("timeout", state.timeout)))
        dev = self._sim.devices.get(device_id)
        if dev is not None and dev.prepared and dev.mode is not DeviceMode.DESTROYED:
            self._sim.record("kill-delivered", kv(("dev", device_id), ("channel", signal.channel.value)))
            self.enter_safe_mode(device_id, signal.scope)
        return signal

    def all_ok(self) -> None:
        for device_id in sorted(self._deadman):
            self._deadman[device_id].last_ok = self._sim.tick
        self._sim.record("all-ok", kv(("n", len(self._deadman))))

    def report_tamper_attempt(self, device_id: str, actor: str) -> None:
        """Kill-switch hardware on prepared devices cannot be removed; the
        attempt itself is evidence."""
        self._evidence.append(5, actor, f"kill-switch-tamper;dev={device_id}")
        self._sim.record("tamper-attempt", kv(("dev", device_id), ("actor", actor)))

    def destroy_list_export(self) -> str:
        lines = [kv(("destroy", dev)) for dev in sorted(self.destroy_list)]
        return "\n".join(lines) + ("\n" if lines else "")
