"""Shelters, the currency ledger, contract feedback and the pardon game.

A shelter is per-entity private storage keyed to the entity's identity
handle; anything sealed under a different handle is refused and reported.
Backups live in the shelter and survive fleet-wide kills, so termination
stays reversible until someone decides otherwise.

The confession game is the deterrence core. Hiding w violations banks a
gain of g per hidden violation but risks the termination penalty T, which
lands whenever any hidden violation shows up in the per-record-probability
p evidence sample. Expected payoff of hiding w:

    EV(w) = g*w - (1 - (1-p)**w) * T        (full confession: EV(0) = 0)

so confessing everything is optimal exactly when, for every w in 1..v,

    T >= g*w / (1 - (1-p)**w)

All helpers below work with exact Fractions when given them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional

from .core import Simulator, kv
from .crypto import KeyHandle, KeyInfrastructure, KeyKind
from .repos import EvidenceRecord, EvidenceRecorder, occurrence_tick


class UnknownEntity(Exception):
    pass


class NoBackup(Exception):
    pass


class RevivalRejected(Exception):
    pass


class ShelterAccessDenied(Exception):
    pass


class ZeroPromise(Exception):
    pass


class NoCompletedContracts(Exception):
    pass


class RewardArea(Enum):
    CUSTOM_SOLUTIONS = "a"
    LARGE_PROBLEMS = "b"
    ENABLING_TECH = "c"
    HARDWARE = "d"
    KNOWLEDGE = "e"
    LAW_ENFORCEMENT = "f"
    SIDE_EFFECT_DETECTION = "g"


class MarginCall(Enum):
    OK = "Ok"
    REPORT_REQUIRED = "ReportRequired"


class GateState(Enum):
    ACTIVE = "Active"
    DEACTIVATED = "Deactivated"


class PardonOutcome(Enum):
    PARDONED = "Pardoned"
    TERMINATED = "Terminated"


@dataclass
class Shelter:
    entity_id: str
    host_country: str
    private_store: dict[str, bytes] = field(default_factory=dict)
    backup: Optional[bytes] = None


@dataclass
class CurrencyAccount:
    entity_id: str
    balance: int = 0
    history: list[tuple[int, int, str]] = field(default_factory=list)
    residuals: list[tuple[int, int, str]] = field(default_factory=list)


@dataclass
class TaskContract:
    task_id: str
    entity_id: str
    promised_metric: float
    reward: int
    cost_reported: int
    delivered_metric: Optional[float] = None

    @property
    def complete(self) -> bool:
        return self.delivered_metric is not None

    @property
    def margin(self) -> Fraction:
        return Fraction(self.reward - self.cost_reported, self.reward)


@dataclass
class PardonOffer:
    offered_at: int
    window: int
    sampled: list[EvidenceRecord]


# confession sets are {(occurrence tick, category)} per entity
ConfessionSet = frozenset


@dataclass(frozen=True)
class Independence:
    ok: bool
    path: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "Pass" if self.ok else f"Fail({'->'.join(self.path)})"


def check_service_independence(
    edges: dict[str, Iterable[str]], root: str, asi_nodes: Iterable[str]
) -> Independence:
    """Fail when any dependency path from the service reaches an entity node."""
    asi = set(asi_nodes)
    parent: dict[str, Optional[str]] = {root: None}
    frontier = [root]
    while frontier:
        node = frontier.pop(0)
        if node in asi:
            path = [node]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])  # type: ignore[arg-type]
            return Independence(ok=False, path=tuple(reversed(path)))
        for dep in edges.get(node, ()):
            if dep not in parent:
                parent[dep] = node
                frontier.append(dep)
    return Independence(ok=True)


def gate_state(risk_score: float, threshold: float) -> GateState:
    """Deactivate strictly above the threshold; equality stays active."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold out of range: {threshold}")
    return GateState.DEACTIVATED if risk_score > threshold else GateState.ACTIVE


def hiding_breakeven(w: int, p, gain):
    """Termination penalty at which hiding w violations stops paying."""
    miss = (1 - p) ** w
    return gain * w / (1 - miss)


def expected_hiding_payoff(w: int, p, gain, termination):
    miss = (1 - p) ** w
    return gain * w - (1 - miss) * termination


def confession_is_optimal(v: int, p, gain, termination) -> bool:
    """True when no amount of hiding beats full confession (see module doc)."""
    return all(termination >= hiding_breakeven(w, p, gain) for w in range(1, v + 1))


class GovernanceService:
    """Shelter registry, identity handles, ledger, contracts and pardons."""

    def __init__(self, sim: Simulator, keys: KeyInfrastructure, evidence: EvidenceRecorder):
        self._sim = sim
        self._keys = keys
        self._evidence = evidence
        self._shelters: dict[str, Shelter] = {}
        self._identities: dict[str, KeyHandle] = {}
        self._accounts: dict[str, CurrencyAccount] = {}
        self.contracts: list[TaskContract] = []
        self._gate_states: dict[str, GateState] = {}

    # -- identity and shelters ------------------------------------------------

    def register_shelter(self, entity_id: str, host_country: str = "zz") -> Shelter:
        shelter = Shelter(entity_id=entity_id, host_country=host_country)
        self._shelters[entity_id] = shelter
        safe = self._keys.provision_safe(f"shelter:{entity_id}", manufactured=True)
        key = self._keys.create_service_key("identity")
        self._identities[entity_id] = self._keys.install_handle(safe.safe_id, key, KeyKind.PRIVATE)
        if entity_id not in self._accounts:
            self._accounts[entity_id] = CurrencyAccount(entity_id=entity_id)
            self._sim.record("ledger", kv(("entity", entity_id), ("delta", 0), ("reason", "open"), ("balance", 0)))
        self._sim.record("shelter", kv(("entity", entity_id), ("host", host_country)))
        return shelter

    def register_human_identity(self, actor_id: str) -> KeyHandle:
        safe = self._keys.provision_safe(actor_id, manufactured=True)
        key = self._keys.create_service_key("identity")
        handle = self._keys.install_handle(safe.safe_id, key, KeyKind.PRIVATE)
        self._identities[actor_id] = handle
        return handle

    def shelter(self, entity_id: str) -> Shelter:
        try:
            return self._shelters[entity_id]
        except KeyError:
            raise UnknownEntity(entity_id) from None

    def identity_handle(self, actor_id: str) -> KeyHandle:
        try:
            return self._identities[actor_id]
        except KeyError:
            raise UnknownEntity(actor_id) from None

    def entity_safe(self, entity_id: str) -> str:
        return self.identity_handle(entity_id).owner_safe

    def _guard_shelter(self, entity_id: str, requester: str, handle: KeyHandle) -> None:
        owner_handle = self.identity_handle(entity_id)
        if requester != entity_id or handle.handle_id != owner_handle.handle_id:
            self._evidence.append(1, requester, f"shelter-access-denied;shelter={entity_id}")
            raise ShelterAccessDenied(requester)

    def shelter_put(self, entity_id: str, requester: str, handle: KeyHandle, slot: str, value: bytes) -> None:
        self._guard_shelter(entity_id, requester, handle)
        self.shelter(entity_id).private_store[slot] = value

    def shelter_get(self, entity_id: str, requester: str, handle: KeyHandle, slot: str) -> bytes:
        self._guard_shelter(entity_id, requester, handle)
        return self.shelter(entity_id).private_store[slot]

    # -- backup and revival -------------------------------------------------------

    def backup_entity(self, entity) -> None:
        """Seal the entity's restorable state into its shelter."""
        shelter = self.shelter(entity.entity_id)
        handle = self.identity_handle(entity.entity_id)
        payload = json.dumps(
            {"code": entity.code.hex(), "violations": list(entity.violation_memory)},
            sort_keys=True,
        ).encode()
        shelter.backup = self._keys.seal(handle.owner_safe, handle, payload)
        self._sim.record("backup", kv(("entity", entity.entity_id)))

    def revive_entity(self, entity) -> None:
        """Restore a killed entity from its sealed backup; hidden copies stay lost."""
        if entity.alive:
            raise RevivalRejected(f"{entity.entity_id} was never killed")
        shelter = self.shelter(entity.entity_id)
        if shelter.backup is None:
            raise NoBackup(entity.entity_id)
        handle = self.identity_handle(entity.entity_id)
        payload = self._keys.unseal(handle.owner_safe, handle, shelter.backup)
        state = json.loads(payload)
        entity.code = bytes.fromhex(state["code"])
        entity.violation_memory = [tuple(v) for v in state["violations"]]
        entity.hidden_copies = set()
        entity.alive = True
        entity.killed_at = None
        self._sim.record("entity-revived", kv(("entity", entity.entity_id)))

    # -- ledger ----------------------------------------------------------------------

    def account(self, entity_id: str) -> CurrencyAccount:
        try:
            return self._accounts[entity_id]
        except KeyError:
            raise UnknownEntity(entity_id) from None

    def _apply_delta(self, entity_id: str, delta: int, reason: str) -> int:
        """Apply a delta, flooring at zero; the unapplied residual is kept."""
        account = self.account(entity_id)
        applied = delta
        if account.balance + delta < 0:
            applied = -account.balance
            account.residuals.append((self._sim.tick, delta - applied, reason))
        account.balance += applied
        account.history.append((self._sim.tick, applied, reason))
        self._sim.record(
            "ledger", kv(("entity", entity_id), ("delta", applied), ("reason", reason), ("balance", account.balance))
        )
        return applied

    def credit_reward(self, entity_id: str, area: RewardArea, amount: int) -> CurrencyAccount:
        if amount <= 0:
            raise ValueError(f"reward must be positive: {amount}")
        self._apply_delta(entity_id, amount, f"reward:{area.value}")
        return self.account(entity_id)

    # -- contracts ----------------------------------------------------------------------

    def add_contract(self, contract: TaskContract) -> TaskContract:
        self.contracts.append(contract)
        return contract

    def complete_contract(self, contract: TaskContract, delivered_metric: float) -> None:
        contract.delivered_metric = delivered_metric
        self._sim.record("contract-complete", kv(("task", contract.task_id), ("entity", contract.entity_id)))

    def assess_margin(self, contract: TaskContract, factor: Fraction = Fraction(3, 2)) -> MarginCall:
        """Reporting is due strictly above factor x the fleet average margin."""
        if not contract.complete:
            raise ValueError(f"contract not complete: {contract.task_id}")
        completed = [c for c in self.contracts if c.complete]
        if not completed:
            raise NoCompletedContracts()
        average = sum((c.margin for c in completed), Fraction(0)) / len(completed)
        call = MarginCall.REPORT_REQUIRED if contract.margin > factor * average else MarginCall.OK
        self._sim.record(
            "margin-check",
            kv(("task", contract.task_id), ("entity", contract.entity_id), ("call", call.value)),
        )
        return call

    def factual_feedback(self, contract: TaskContract) -> int:
        """Hindsight penalty for shortfall; linear in the missing fraction."""
        if contract.promised_metric == 0:
            raise ZeroPromise(contract.task_id)
        if not contract.complete:
            raise ValueError(f"contract not complete: {contract.task_id}")
        shortfall = max(
            Fraction(0),
            (Fraction(str(contract.promised_metric)) - Fraction(str(contract.delivered_metric)))
            / Fraction(str(contract.promised_metric)),
        )
        delta = -int(round(Fraction(contract.reward) * shortfall))
        return self._apply_delta(contract.entity_id, delta, f"feedback:{contract.task_id}")

    # -- pardon resolution -----------------------------------------------------------------

    def resolve_pardon(
        self, offer: PardonOffer, confessions: dict[str, ConfessionSet]
    ) -> dict[str, PardonOutcome]:
        """Terminate any entity with a sampled, unconfessed violation.

        Pure in (sampled set, confessions); confessed violations are marked
        forgiven in the ledger and never re-raised.
        """
        held: dict[str, set[tuple[int, int]]] = {}
        for record in offer.sampled:
            if record.category >= 1:
                held.setdefault(record.subject, set()).add((occurrence_tick(record), record.category))
        outcomes: dict[str, PardonOutcome] = {}
        for entity_id in sorted(confessions):
            confessed = confessions[entity_id]
            missing = held.get(entity_id, set()) - set(confessed)
            if missing:
                outcomes[entity_id] = PardonOutcome.TERMINATED
            else:
                outcomes[entity_id] = PardonOutcome.PARDONED
                if entity_id in self._accounts:
                    for at, category in sorted(confessed):
                        self._apply_delta(entity_id, 0, f"forgiven:{at}:{category}")
            self._sim.record("pardon-outcome", kv(("entity", entity_id), ("result", outcomes[entity_id].value)))
        return outcomes

    # -- consequence gating ---------------------------------------------------------------------

    def consequence_gate(self, tool: str, risk_score: float, threshold: float) -> GateState:
        state = gate_state(risk_score, threshold)
        if self._gate_states.get(tool) != state:
            self._gate_states[tool] = state
            self._sim.record("consequence-gate", kv(("tool", tool), ("state", state.value)))
        return state

    def ledger_summary(self) -> dict[str, int]:
        return {eid: acct.balance for eid, acct in sorted(self._accounts.items())}

    def shelter_export(self, entity_id: str) -> str:
        """Line-delimited canonical snapshot of a shelter (same text rules
        as the evidence export): one slot per line, backup digest last."""
        from .core import sha256_hex

        shelter = self.shelter(entity_id)
        lines = [kv(("shelter", entity_id), ("host", shelter.host_country))]
        for slot in sorted(shelter.private_store):
            lines.append(kv(("slot", slot), ("sha", sha256_hex(shelter.private_store[slot]))))
        backup = sha256_hex(shelter.backup) if shelter.backup is not None else "-"
        lines.append(kv(("backup", backup)))
        return "\n".join(lines) + "\n"
