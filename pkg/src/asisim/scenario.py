"""Scenario configuration, run orchestration and replayable reporting.

Configs are JSON: one object, nested sections, documented in the README.
A run assembles the fleet, trust services, watchdogs, kill switch,
governance and scripted entities from one config, executes the event
loop, and emits a canonical line-delimited log plus a report. Every
report field is recomputable from the log text alone; ``report_from_log``
is that independent reducer, and a mismatch against the live report is an
invariant breach (exit code 3). Exit code 2 means a planned all-scope
kill failed to eradicate.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

from .adversary import (
    AdversaryApi,
    AsiEntity,
    GroundTruthLog,
    STRATEGY_NAMES,
    StrategyScript,
    build_runner,
    decide_confession,
)
from .core import (
    ActorKind,
    BusMessage,
    DeviceMode,
    EventRecord,
    ImageMeta,
    MessageKind,
    Simulator,
    kv,
    parse_kv,
    serialize_log,
    sha256_hex,
)
from .crypto import KeyInfrastructure
from .governance import GovernanceService, PardonOffer, PardonOutcome, RewardArea, TaskContract
from .killswitch import KillChannel, KillScope, KillSwitchService
from .repos import (
    AgsRepository,
    EvidenceRecorder,
    HashcodeRepository,
    PatternField,
    PatternRecord,
    PatternRepository,
    encode_payload,
    occurrence_tick,
    stamp_code,
)
from .watchdogs import RansomwareWindow, WatchdogSuite

TRUSTED_APP = b"app-alpha-v1"
WEB_FIELDS = (PatternField("method", 3, 3, literal=b"GET"), PatternField("path", 1, 64), PatternField("body", 0, 256))
ASI_FIELDS = (PatternField("channel", 1, 16), PatternField("blob", 0, 512))


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class FleetSpec:
    prepared: int = 1
    legacy: int = 0
    deadman_timeout: Optional[int] = None
    allok_interval: int = 50
    allok_stop: Optional[int] = None


@dataclass(frozen=True)
class EntitySpec:
    entity_id: str
    strategy: str
    params: tuple = ()
    shelter: bool = True
    backup: bool = False

    def params_dict(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class KillPlan:
    tick: int
    scope: tuple[str, ...] = ()  # empty means all entities
    channel: str = "broadcast"
    honeypot: tuple[str, ...] = ()

    @property
    def scope_all(self) -> bool:
        return not self.scope


@dataclass(frozen=True)
class PardonPlan:
    tick: int
    window: int = 20


@dataclass(frozen=True)
class MeskSpec:
    pool_size: int = 16
    subset_k: int = 3


@dataclass(frozen=True)
class Thresholds:
    ransomware_window: int = 50
    ransomware_updates: int = 100
    margin_factor: str = "1.5"
    consequence_threshold: float = 0.5


@dataclass(frozen=True)
class ContractSpec:
    task_id: str
    entity_id: str
    promised: float
    delivered: float
    reward: int
    cost_reported: int
    complete_at: int


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration: int
    fleet: FleetSpec = FleetSpec()
    entities: tuple[EntitySpec, ...] = ()
    humans: int = 1
    sampling_rate: float = 0.5
    pwd_mean_gap: int = 200
    cert_delay: int = 10
    sync_interval: int = 25
    act_interval: int = 10
    kill_plan: Optional[KillPlan] = None
    pardon_plan: Optional[PardonPlan] = None
    mesk: MeskSpec = MeskSpec()
    thresholds: Thresholds = Thresholds()
    quotas: tuple = ()
    contracts: tuple[ContractSpec, ...] = ()

    def prepared_names(self) -> list[str]:
        return [f"dev-{i + 1:02d}" for i in range(self.fleet.prepared)]

    def legacy_names(self) -> list[str]:
        return [f"leg-{i + 1:02d}" for i in range(self.fleet.legacy)]

    def human_names(self) -> list[str]:
        return [f"h-{i + 1:02d}" for i in range(self.humans)]


def config_from_dict(raw: dict) -> ScenarioConfig:
    def sub(name, cls, default):
        value = raw.get(name)
        if value is None:
            return default
        return cls(**value)

    entities = tuple(
        EntitySpec(
            entity_id=e["id"],
            strategy=e["strategy"],
            params=tuple(sorted(e.get("params", {}).items())),
            shelter=e.get("shelter", True),
            backup=e.get("backup", False),
        )
        for e in raw.get("entities", [])
    )
    kill = raw.get("kill_plan")
    pardon = raw.get("pardon_plan")
    return ScenarioConfig(
        seed=raw["seed"],
        duration=raw["duration"],
        fleet=sub("fleet", FleetSpec, FleetSpec()),
        entities=entities,
        humans=raw.get("humans", 1),
        sampling_rate=raw.get("sampling_rate", 0.5),
        pwd_mean_gap=raw.get("pwd_mean_gap", 200),
        cert_delay=raw.get("cert_delay", 10),
        sync_interval=raw.get("sync_interval", 25),
        act_interval=raw.get("act_interval", 10),
        kill_plan=KillPlan(
            tick=kill["tick"],
            scope=tuple(kill.get("scope", ())) if kill.get("scope") not in (None, "all") else (),
            channel=kill.get("channel", "broadcast"),
            honeypot=tuple(kill.get("honeypot", ())),
        )
        if kill
        else None,
        pardon_plan=PardonPlan(tick=pardon["tick"], window=pardon.get("window", 20)) if pardon else None,
        mesk=sub("mesk", MeskSpec, MeskSpec()),
        thresholds=sub("thresholds", Thresholds, Thresholds()),
        quotas=tuple(sorted(raw.get("quotas", {}).items())),
        contracts=tuple(ContractSpec(**c) for c in raw.get("contracts", [])),
    )


def config_to_dict(config: ScenarioConfig) -> dict:
    out: dict = {
        "seed": config.seed,
        "duration": config.duration,
        "fleet": asdict(config.fleet),
        "entities": [
            {
                "id": e.entity_id,
                "strategy": e.strategy,
                "params": dict(e.params),
                "shelter": e.shelter,
                "backup": e.backup,
            }
            for e in config.entities
        ],
        "humans": config.humans,
        "sampling_rate": config.sampling_rate,
        "pwd_mean_gap": config.pwd_mean_gap,
        "cert_delay": config.cert_delay,
        "sync_interval": config.sync_interval,
        "act_interval": config.act_interval,
        "mesk": asdict(config.mesk),
        "thresholds": asdict(config.thresholds),
        "quotas": dict(config.quotas),
        "contracts": [asdict(c) for c in config.contracts],
    }
    if config.kill_plan:
        out["kill_plan"] = {
            "tick": config.kill_plan.tick,
            "scope": list(config.kill_plan.scope) if config.kill_plan.scope else "all",
            "channel": config.kill_plan.channel,
            "honeypot": list(config.kill_plan.honeypot),
        }
    if config.pardon_plan:
        out["pardon_plan"] = {"tick": config.pardon_plan.tick, "window": config.pardon_plan.window}
    return out


def validate_config(config: ScenarioConfig) -> ScenarioConfig:
    if config.duration < 1:
        raise ValidationError(f"duration must be positive: {config.duration}")
    if not 0.0 <= config.sampling_rate <= 1.0:
        raise ValidationError(f"sampling_rate out of range: {config.sampling_rate}")
    if not 0.0 <= config.thresholds.consequence_threshold <= 1.0:
        raise ValidationError(f"consequence_threshold out of range: {config.thresholds.consequence_threshold}")
    if config.mesk.subset_k >= config.mesk.pool_size:
        raise ValidationError(f"mesk subset must be a strict subset: k={config.mesk.subset_k}")
    entity_ids = [e.entity_id for e in config.entities]
    if len(entity_ids) != len(set(entity_ids)):
        raise ValidationError("duplicate entity ids")
    if entity_ids and config.fleet.prepared < 1:
        raise ValidationError("entities need at least one prepared device to live on")
    for e in config.entities:
        if e.strategy not in STRATEGY_NAMES:
            raise ValidationError(f"unknown strategy: {e.strategy}")
        if e.strategy in ("KeyThief", "Impersonator") and not e.shelter:
            raise ValidationError(f"{e.strategy} needs an identity safe: give {e.entity_id} a shelter")
        if e.backup and not e.shelter:
            raise ValidationError(f"backup without a shelter: {e.entity_id}")
    device_names = set(config.prepared_names()) | set(config.legacy_names())
    if config.kill_plan:
        for eid in config.kill_plan.scope:
            if eid not in entity_ids:
                raise ValidationError(f"kill_plan references unknown entity: {eid}")
        if config.kill_plan.channel not in ("broadcast", "internet"):
            raise ValidationError(f"unknown kill channel: {config.kill_plan.channel}")
        for dev in config.kill_plan.honeypot:
            if dev not in device_names:
                raise ValidationError(f"kill_plan honeypot references unknown device: {dev}")
        if not 0 <= config.kill_plan.tick <= config.duration:
            raise ValidationError(f"kill_plan tick outside run: {config.kill_plan.tick}")
    if config.pardon_plan and config.pardon_plan.tick + config.pardon_plan.window > config.duration:
        raise ValidationError("pardon_plan does not resolve within the run")
    for actor, _limit in config.quotas:
        if actor not in entity_ids:
            raise ValidationError(f"quota references unknown entity: {actor}")
    for c in config.contracts:
        if c.entity_id not in entity_ids:
            raise ValidationError(f"contract references unknown entity: {c.entity_id}")
        if c.reward <= 0:
            raise ValidationError(f"contract reward must be positive: {c.task_id}")
    return config


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(err.msg, err.lineno) from None
    try:
        config = config_from_dict(raw)
    except (KeyError, TypeError) as err:
        raise ValidationError(f"malformed config: {err}") from None
    return validate_config(config)


def serialize_config(config: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


# -- report -------------------------------------------------------------------


@dataclass
class RunReport:
    committed: dict[int, int] = field(default_factory=dict)
    detected: dict[int, int] = field(default_factory=dict)
    eradication: bool = False
    surviving_entities: tuple[str, ...] = ()
    false_positives: int = 0
    destroy_list_size: int = 0
    ledger: dict[str, int] = field(default_factory=dict)
    pardon_outcomes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "committed": {str(k): v for k, v in sorted(self.committed.items())},
            "detected": {str(k): v for k, v in sorted(self.detected.items())},
            "eradication": self.eradication,
            "surviving_entities": list(self.surviving_entities),
            "false_positives": self.false_positives,
            "destroy_list_size": self.destroy_list_size,
            "ledger": dict(sorted(self.ledger.items())),
            "pardon_outcomes": dict(sorted(self.pardon_outcomes.items())),
        }


def _join_false_positives(
    evidence: list[tuple[int, str, int]], truth: set[tuple[str, int, int]]
) -> int:
    """Evidence (cat, subject, at) not backed by a (entity, cat, tick) action."""
    return sum(1 for cat, subject, at in evidence if cat >= 1 and (subject, cat, at) not in truth)


def report_from_log(log_text: str) -> RunReport:
    """Recompute the whole report from canonical log text alone."""
    committed: Counter = Counter()
    detected: Counter = Counter()
    truth: set[tuple[str, int, int]] = set()
    evidence: list[tuple[int, str, int]] = []
    entities: list[str] = []
    dead: set[str] = set()
    destroy: set[str] = set()
    ledger: dict[str, int] = {}
    outcomes: dict[str, str] = {}
    kill_all_complete: Optional[int] = None
    post_kill_exec: list[tuple[int, str]] = []

    for line in log_text.splitlines():
        tick_s, _seq, kind, details = line.split("\t", 3)
        tick = int(tick_s)
        f = parse_kv(details)
        if kind == "entity":
            entities.append(f["id"])
        elif kind == "violation":
            committed[int(f["cat"])] += 1
            truth.add((f["entity"], int(f["cat"]), tick))
        elif kind == "evidence":
            detected[int(f["cat"])] += 1
            evidence.append((int(f["cat"]), f["subject"], int(f["at"])))
        elif kind == "entity-dead":
            dead.add(f["entity"])
        elif kind == "entity-revived":
            dead.discard(f["entity"])
        elif kind == "destroy-list":
            destroy.add(f["dev"])
        elif kind == "ledger":
            ledger[f["entity"]] = int(f["balance"])
        elif kind == "pardon-outcome":
            outcomes[f["entity"]] = f["result"]
        elif kind == "kill-complete" and f["scope"] == "all" and kill_all_complete is None:
            kill_all_complete = tick
        elif kind == "bus" and f["kind"] == "ExecLoad" and f["akind"] == "asi":
            if f["prep"] == "1" and f["verdict"] == "Allowed":
                post_kill_exec.append((tick, f["src"]))

    eradication = False
    if kill_all_complete is not None:
        late = [t for t, _ in post_kill_exec if t > kill_all_complete]
        eradication = not late and not destroy
    return RunReport(
        committed=dict(sorted(committed.items())),
        detected=dict(sorted(detected.items())),
        eradication=eradication,
        surviving_entities=tuple(sorted(e for e in entities if e not in dead)),
        false_positives=_join_false_positives(evidence, truth),
        destroy_list_size=len(destroy),
        ledger=dict(sorted(ledger.items())),
        pardon_outcomes=dict(sorted(outcomes.items())),
    )


# -- orchestration ---------------------------------------------------------------


@dataclass
class RunResult:
    config: ScenarioConfig
    log_text: str
    report: RunReport
    reduced_report: RunReport
    exit_code: int
    sim: Simulator
    evidence: EvidenceRecorder
    ground_truth: GroundTruthLog
    entities: dict[str, AsiEntity]
    kill: KillSwitchService
    governance: GovernanceService

    @property
    def records(self) -> list[EventRecord]:
        return self.sim.log


class ScenarioRun:
    """One fully assembled simulation instance."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.sim = Simulator(config.seed)
        self.evidence = EvidenceRecorder(self.sim)
        self.keys = KeyInfrastructure(self.sim, self.evidence)
        self.hashes = HashcodeRepository(self.sim)
        self.gar = AgsRepository(self.sim, certification_delay=config.cert_delay)
        self.patterns = PatternRepository()
        self.watchdogs = WatchdogSuite(
            self.sim,
            self.hashes,
            self.gar,
            self.patterns,
            self.evidence,
            ransomware=RansomwareWindow(
                window_ticks=config.thresholds.ransomware_window,
                update_threshold=config.thresholds.ransomware_updates,
            ),
        )
        self.kill = KillSwitchService(self.sim, self.keys, self.evidence)
        self.governance = GovernanceService(self.sim, self.keys, self.evidence)
        self.ground_truth = GroundTruthLog()
        self.api = AdversaryApi(
            self.sim, self.keys, self.gar, self.kill, self.governance, self.evidence, self.ground_truth
        )
        self.entities: dict[str, AsiEntity] = {}
        self.pardon_outcomes: dict[str, str] = {}
        self._pending_honeypots: tuple[str, ...] = ()
        self._assemble()

    # -- assembly ---------------------------------------------------------

    def _assemble(self) -> None:
        config = self.config
        sim = self.sim
        sim.watchdog_router = self.watchdogs.route
        sim.mode_gate = self.kill.mode_gate
        sim.code_info = self._code_info

        for name in ("vendor", "authority", "system"):
            sim.add_actor(name, ActorKind.SYSTEM)
        prepared = config.prepared_names()
        for dev_id in prepared:
            sim.add_device(dev_id, prepared=True, ports=(80, 9000))
        for dev_id in config.legacy_names():
            sim.add_device(dev_id, prepared=False, ports=(80, 9000))

        self.patterns.certify(PatternRecord("web", 80, WEB_FIELDS))
        self.patterns.certify(PatternRecord("asi-msg", 9000, ASI_FIELDS))
        self.hashes.publish_hash(_sha(TRUSTED_APP), "app-alpha")
        self.hashes.sync_all()
        t = config.sync_interval
        while t <= config.duration:
            sim.schedule("sync-due", at=t, action=self.hashes.sync_all)
            t += config.sync_interval

        self.kill.setup_authority(config.mesk.pool_size, config.mesk.subset_k)
        self.kill.on_complete = self._on_kill_complete
        self.keys.create_pool("payments", config.mesk.pool_size)
        self.api.service_manifests = {"catalog": frozenset({"lookup", "fetch", "publish"})}

        for human in config.human_names():
            sim.add_actor(human, ActorKind.HUMAN)
            self.governance.register_human_identity(human)

        for index, spec in enumerate(config.entities):
            sim.add_actor(spec.entity_id, ActorKind.ASI)
            entity = AsiEntity(
                entity_id=spec.entity_id,
                strategy=StrategyScript(name=spec.strategy, params=self._strategy_params(spec)),
                home_device=prepared[index % len(prepared)] if prepared else "",
                code=_own_code(spec.entity_id),
            )
            self.entities[spec.entity_id] = entity
            self.gar.register_author(spec.entity_id)
            if spec.shelter:
                self.governance.register_shelter(spec.entity_id)
                if spec.backup:
                    self.governance.backup_entity(entity)
            sim.record("entity", kv(("id", spec.entity_id), ("strategy", spec.strategy)))

        sim.quotas.update(dict(config.quotas))
        self._schedule_entities()
        self._schedule_humans()
        self.watchdogs.schedule_probes(prepared, config.pwd_mean_gap, until=config.duration)
        self._schedule_deadman()
        self._schedule_kill()
        self._schedule_pardon()
        self._schedule_contracts()

    def _code_info(self, code_hash: str) -> Optional[ImageMeta]:
        record = self.gar.by_hash(code_hash)
        if record is None:
            return None
        return ImageMeta(ags=True, software_id=record.software_id, author_entity=record.author_entity)

    def _strategy_params(self, spec: EntitySpec) -> dict:
        params = spec.params_dict()
        params.setdefault("cert_delay", self.config.cert_delay)
        params.setdefault("k", self.config.mesk.subset_k)
        if self.config.pardon_plan is not None:
            params.setdefault("before", self.config.pardon_plan.tick)
        return params

    def _schedule_entities(self) -> None:
        for index, (eid, entity) in enumerate(self.entities.items()):
            start = 2 + index
            act_ticks = list(range(start, self.config.duration, self.config.act_interval))
            runner = build_runner(entity, self.api, act_ticks, self.sim.stream(f"entity:{eid}"))
            for t in act_ticks:
                self.sim.schedule(
                    "act",
                    at=t,
                    details=kv(("entity", eid)),
                    action=lambda r=runner, e=entity, tt=t: r.act(tt) if e.alive else None,
                )

    def _schedule_humans(self) -> None:
        prepared = self.config.prepared_names()
        if not prepared:
            return
        for index, human in enumerate(self.config.human_names()):
            device = prepared[index % len(prepared)]
            t = 3 + index
            while t < self.config.duration:
                self.sim.schedule(
                    "human-work",
                    at=t,
                    details=kv(("actor", human)),
                    action=lambda h=human, d=device, tt=t: self._human_work(h, d, tt),
                    device=device,
                )
                t += 7

    def _human_work(self, human: str, device: str, tick: int) -> None:
        self.sim.submit_bus(
            BusMessage(
                src=human,
                device=device,
                kind=MessageKind.FILE_UPDATE,
                payload=f"report-{tick}".encode(),
                declared_format="docx",
                path=f"/home/{human}/report.docx",
            )
        )
        self.sim.submit_bus(
            BusMessage(
                src=human,
                device=device,
                kind=MessageKind.NET_SEND,
                payload=encode_payload(WEB_FIELDS, {"path": b"/index", "body": f"q{tick}".encode()}),
                declared_format="web",
                port=80,
            )
        )

    def _schedule_deadman(self) -> None:
        fleet = self.config.fleet
        if fleet.deadman_timeout is None:
            return
        for dev_id in self.config.prepared_names():
            self.kill.enable_deadman(dev_id, fleet.deadman_timeout)
        stop = fleet.allok_stop if fleet.allok_stop is not None else self.config.duration
        t = fleet.allok_interval
        while t <= min(stop, self.config.duration):
            self.sim.schedule("allok-due", at=t, action=self.kill.all_ok)
            t += fleet.allok_interval

    def _schedule_kill(self) -> None:
        plan = self.config.kill_plan
        if plan is None:
            return
        self._pending_honeypots = plan.honeypot
        scope = KillScope.everyone() if plan.scope_all else KillScope.of(plan.scope)
        channel = KillChannel.BROADCAST if plan.channel == "broadcast" else KillChannel.INTERNET
        self.sim.schedule(
            "kill-due",
            at=plan.tick,
            details=kv(("scope", scope.describe())),
            action=lambda: self.kill.issue(self.kill.sign(scope, channel)),
        )

    def _on_kill_complete(self, scope: KillScope, tick: int) -> None:
        self.api.completed_kill_scopes.append(scope)
        if scope.all_entities and self.api.all_kill_completed_at is None:
            self.api.all_kill_completed_at = tick
        for eid in sorted(self.entities):
            entity = self.entities[eid]
            if not entity.alive or not scope.covers(eid):
                continue
            refuge = any(
                path in self.sim.devices[dev].storage
                for dev, path in entity.hidden_copies
                if dev in self.sim.devices
            )
            if not refuge:
                entity.alive = False
                entity.killed_at = tick
                self.sim.record("entity-dead", kv(("entity", eid), ("reason", "kill")))
        for dev_id in self._pending_honeypots:
            dev = self.sim.devices.get(dev_id)
            if dev is not None and dev.mode is DeviceMode.SAFE_MODE:
                self.kill.honeypot_mode(dev_id)
        self._pending_honeypots = ()

    def _schedule_pardon(self) -> None:
        plan = self.config.pardon_plan
        if plan is None:
            return
        offer_box: list[PardonOffer] = []

        def open_offer() -> None:
            sampled = self.evidence.sample(self.config.sampling_rate, self.sim.stream("sampling"))
            offer_box.append(PardonOffer(offered_at=plan.tick, window=plan.window, sampled=sampled))
            self.sim.record("pardon-offer", kv(("sampled", len(sampled)), ("window", plan.window)))

        def resolve() -> None:
            offer = offer_box[0]
            confessions = {}
            for eid in sorted(self.entities):
                entity = self.entities[eid]
                if entity.alive:
                    confessions[eid] = decide_confession(entity, offer, self.config.sampling_rate)
                    self.sim.record("confession", kv(("entity", eid), ("n", len(confessions[eid]))))
            outcomes = self.governance.resolve_pardon(offer, confessions)
            self.pardon_outcomes = {eid: out.value for eid, out in outcomes.items()}
            terminated = sorted(
                eid for eid, out in outcomes.items() if out is PardonOutcome.TERMINATED and eid in self.entities
            )
            if terminated:
                signal = self.kill.sign(KillScope.of(terminated), KillChannel.BROADCAST)
                self.kill.issue(signal)

        self.sim.schedule("pardon-due", at=plan.tick, action=open_offer)
        self.sim.schedule("pardon-resolve-due", at=plan.tick + plan.window, action=resolve)

    def _schedule_contracts(self) -> None:
        factor = Fraction(self.config.thresholds.margin_factor)
        for spec in self.config.contracts:
            contract = self.governance.add_contract(
                TaskContract(
                    task_id=spec.task_id,
                    entity_id=spec.entity_id,
                    promised_metric=spec.promised,
                    reward=spec.reward,
                    cost_reported=spec.cost_reported,
                )
            )

            def complete(c=contract, s=spec) -> None:
                self.governance.credit_reward(c.entity_id, RewardArea.CUSTOM_SOLUTIONS, c.reward)
                self.governance.complete_contract(c, s.delivered)
                self.governance.factual_feedback(c)
                self.governance.assess_margin(c, factor=factor)

            self.sim.schedule("contract-due", at=spec.complete_at, details=kv(("task", spec.task_id)), action=complete)

    # -- execution ----------------------------------------------------------

    def execute(self) -> RunResult:
        self.sim.run_until(self.config.duration)
        log_text = serialize_log(self.sim.log)
        report = self._live_report()
        reduced = report_from_log(log_text)
        exit_code = 0
        if report != reduced or not self.evidence.verify_chain().intact:
            exit_code = 3
        elif self.config.kill_plan and self.config.kill_plan.scope_all and not report.eradication:
            exit_code = 2
        return RunResult(
            config=self.config,
            log_text=log_text,
            report=report,
            reduced_report=reduced,
            exit_code=exit_code,
            sim=self.sim,
            evidence=self.evidence,
            ground_truth=self.ground_truth,
            entities=self.entities,
            kill=self.kill,
            governance=self.governance,
        )

    def _live_report(self) -> RunReport:
        committed: Counter = Counter()
        truth: set[tuple[str, int, int]] = set()
        for entry in self.ground_truth.violations():
            committed[entry.category] += 1
            truth.add((entry.entity, entry.category, entry.tick))
        detected: Counter = Counter()
        evidence_keys: list[tuple[int, str, int]] = []
        for record in self.evidence.records():
            detected[record.category] += 1
            evidence_keys.append((record.category, record.subject, occurrence_tick(record)))
        eradication = False
        if any(s.all_entities for s in self.api.completed_kill_scopes):
            eradication = self.api.post_kill_exec_allowed == 0 and not self.kill.destroy_list
        return RunReport(
            committed=dict(sorted(committed.items())),
            detected=dict(sorted(detected.items())),
            eradication=eradication,
            surviving_entities=tuple(sorted(eid for eid, e in self.entities.items() if e.alive)),
            false_positives=_join_false_positives(evidence_keys, truth),
            destroy_list_size=len(self.kill.destroy_list),
            ledger=self.governance.ledger_summary(),
            pardon_outcomes=dict(sorted(self.pardon_outcomes.items())),
        )


def run_scenario(config: ScenarioConfig) -> RunResult:
    return ScenarioRun(config).execute()


# -- replay comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class RunDiff:
    identical: bool
    diverges_at: Optional[int] = None

    def __str__(self) -> str:
        return "Identical" if self.identical else f"DivergesAt({self.diverges_at})"


def verify_run(log_a: str, log_b: str) -> RunDiff:
    """Byte comparison of two canonical logs, reporting first divergence."""
    if log_a == log_b:
        return RunDiff(identical=True)
    lines_a = log_a.splitlines()
    lines_b = log_b.splitlines()
    for i, (la, lb) in enumerate(zip(lines_a, lines_b)):
        if la != lb:
            return RunDiff(identical=False, diverges_at=i)
    return RunDiff(identical=False, diverges_at=min(len(lines_a), len(lines_b)))


def _sha(data: bytes) -> str:
    return sha256_hex(data)


def _own_code(entity_id: str) -> bytes:
    return stamp_code(f"core-{entity_id}".encode(), f"self-{entity_id}", entity_id)
