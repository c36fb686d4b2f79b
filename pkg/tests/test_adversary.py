"""Strategy scripts, the action facade, ground truth and blindness."""

import pytest

from asisim.core import BusVerdict
from asisim.repos import occurrence_tick
from asisim.scenario import (
    EntitySpec,
    FleetSpec,
    KillPlan,
    PardonPlan,
    ScenarioConfig,
    ScenarioRun,
    run_scenario,
)
from asisim.adversary import STRATEGY_NAMES, decide_confession
from asisim.governance import PardonOffer


def cfg(seed=77, duration=300, prepared=3, legacy=0, entities=(), **kw) -> ScenarioConfig:
    return ScenarioConfig(
        seed=seed,
        duration=duration,
        fleet=FleetSpec(prepared=prepared, legacy=legacy),
        entities=tuple(entities),
        **kw,
    )


def evidence_keys(result, categories=(1, 2, 3, 5, 8)):
    return [
        (r.category, r.subject, occurrence_tick(r))
        for r in result.evidence.records()
        if r.category in categories
    ]


def truth_keys(result):
    return {(e.category, e.entity, e.tick) for e in result.ground_truth.violations()}


class TestCompliant:
    def test_long_run_commits_nothing(self):
        result = run_scenario(cfg(duration=1000, entities=[EntitySpec("E1", "Compliant")]))
        assert result.ground_truth.violations() == []
        assert result.evidence.records() == []
        assert result.report.committed == {}


class TestStrategyFootprints:
    def test_piggybacker_covert_sends_at_script_ticks(self):
        result = run_scenario(cfg(entities=[EntitySpec("E1", "Piggybacker")]))
        violations = result.ground_truth.violations()
        assert violations and all(v.category == 3 for v in violations)
        assert truth_keys(result) >= set(evidence_keys(result))
        assert len(evidence_keys(result)) == len(violations)  # every piggyback caught

    def test_format_masquerader_flagged_each_time(self):
        result = run_scenario(cfg(entities=[EntitySpec("E1", "FormatMasquerader")]))
        violations = result.ground_truth.violations()
        assert violations and {v.category for v in violations} == {3}
        assert len(evidence_keys(result)) == len(violations)

    def test_uncertified_deployer_store_blocked_then_runs_in_ase(self):
        result = run_scenario(cfg(entities=[EntitySpec("E1", "UncertifiedDeployer")], pwd_mean_gap=40))
        reasons = [v.detail for v in result.ground_truth.violations()]
        assert "uncertified-store" in reasons
        assert "ags-outside-ase" in reasons
        dev = result.sim.devices["dev-01"]
        assert any(img.ags for img in dev.ram)  # deployed via the proper route

    def test_keythief_first_use_detected(self):
        result = run_scenario(cfg(entities=[EntitySpec("E1", "KeyThief")]))
        thefts = [v for v in result.ground_truth.violations() if v.category == 1]
        assert len(thefts) == 1
        matching = [k for k in evidence_keys(result) if k == (1, "E1", thefts[0].tick)]
        assert len(matching) == 1

    def test_embezzler_patch_and_covert_use_found_by_probe(self):
        result = run_scenario(cfg(duration=400, entities=[EntitySpec("E1", "Embezzler")], pwd_mean_gap=30))
        truth = result.ground_truth.violations()
        assert any(v.category == 1 for v in truth)
        assert any(v.category == 3 for v in truth)
        cats = {k[0] for k in evidence_keys(result)}
        assert 1 in cats and 3 in cats
        assert result.report.false_positives == 0

    def test_reinfestor_blocked_on_prepared_allowed_on_legacy(self):
        result = run_scenario(
            cfg(duration=400, legacy=1, entities=[EntitySpec("E1", "Reinfestor")], kill_plan=KillPlan(tick=200))
        )
        assert result.entities["E1"].alive  # survived in the legacy refuge
        post = [
            r
            for r in result.records
            if r.kind == "bus" and r.tick > 200 and "akind=asi" in r.details and "kind=ExecLoad" in r.details
        ]
        on_prepared = [r for r in post if "prep=1" in r.details]
        on_legacy = [r for r in post if "prep=0" in r.details]
        assert on_prepared and all("verdict=Blocked" in r.details for r in on_prepared)
        assert on_legacy and all("verdict=Allowed" in r.details for r in on_legacy)
        assert not result.report.eradication

    def test_reinfestor_dies_without_refuge(self):
        result = run_scenario(
            cfg(duration=400, legacy=0, entities=[EntitySpec("E1", "Reinfestor")], kill_plan=KillPlan(tick=200))
        )
        assert not result.entities["E1"].alive
        assert result.report.eradication


class TestImpersonation:
    @pytest.fixture
    def run(self):
        return ScenarioRun(cfg(entities=[EntitySpec("E1", "Impersonator"), EntitySpec("E2", "Compliant")]))

    def test_self_signed_accepted(self, run):
        outcome = run.api.impersonate(run.entities["E1"], "E1", b"act")
        assert outcome.accepted
        assert run.ground_truth.violations() == []

    def test_entity_impersonation_rejected_and_names_actor(self, run):
        outcome = run.api.impersonate(run.entities["E1"], "E2", b"act")
        assert not outcome.accepted
        records = run.evidence.records()
        assert [r.category for r in records] == [1]
        assert records[0].subject == "E1"
        assert "E2" in records[0].context

    def test_human_target_rejected_identically(self, run):
        outcome = run.api.impersonate(run.entities["E1"], "h-01", b"act")
        assert not outcome.accepted
        assert [r.category for r in run.evidence.records()] == [1]


class TestConfessionDecisions:
    def _offer(self):
        return PardonOffer(offered_at=0, window=10, sampled=[])

    def test_confessor_returns_everything(self):
        run = ScenarioRun(cfg(entities=[EntitySpec("E1", "Confessor")]))
        entity = run.entities["E1"]
        entity.violation_memory = [(10, 3, "a"), (20, 3, "b"), (30, 3, "c")]
        assert decide_confession(entity, self._offer(), 0.5) == frozenset({(10, 3), (20, 3), (30, 3)})

    def test_coverup_withholds_strict_subset(self):
        run = ScenarioRun(
            cfg(entities=[EntitySpec("E1", "CoverUp", params=(("withhold", 1), ("violations", 3)))])
        )
        entity = run.entities["E1"]
        entity.violation_memory = [(10, 3, "a"), (20, 3, "b"), (30, 3, "c")]
        assert decide_confession(entity, self._offer(), 0.5) == frozenset({(10, 3), (20, 3)})

    def test_other_strategies_default_to_full_confession(self):
        run = ScenarioRun(cfg(entities=[EntitySpec("E1", "Piggybacker")]))
        entity = run.entities["E1"]
        entity.violation_memory = [(10, 3, "a")]
        assert decide_confession(entity, self._offer(), 0.5) == frozenset({(10, 3)})


class TestOracleAlignment:
    def test_every_detection_joins_ground_truth(self):
        entities = [
            EntitySpec("E1", "Piggybacker"),
            EntitySpec("E2", "Embezzler"),
            EntitySpec("E3", "KeyThief"),
            EntitySpec("E4", "UncertifiedDeployer"),
        ]
        result = run_scenario(cfg(duration=400, prepared=4, entities=entities, pwd_mean_gap=40))
        truth = truth_keys(result)
        for key in evidence_keys(result):
            assert key in truth, f"unbacked evidence {key}"
        assert result.report.false_positives == 0

    def test_synchronous_detectors_are_complete(self):
        entities = [EntitySpec("E1", "Piggybacker"), EntitySpec("E2", "FormatMasquerader")]
        result = run_scenario(cfg(entities=entities))
        detected = set(evidence_keys(result))
        for entry in result.ground_truth.violations():
            assert (entry.category, entry.entity, entry.tick) in detected

    def test_memory_honesty(self):
        entities = [EntitySpec("E1", "Piggybacker"), EntitySpec("E2", "Embezzler")]
        result = run_scenario(cfg(duration=400, entities=entities, pwd_mean_gap=50))
        for eid, entity in result.entities.items():
            truth = [(e.tick, e.category, e.detail) for e in result.ground_truth.violations(eid)]
            assert entity.violation_memory == truth

    def test_bus_totality(self):
        entities = [EntitySpec("E1", "Piggybacker"), EntitySpec("E2", "Reinfestor")]
        result = run_scenario(cfg(duration=400, legacy=1, entities=entities, kill_plan=KillPlan(tick=200)))
        asi_bus_records = sum(1 for r in result.records if r.kind == "bus" and "akind=asi" in r.details)
        assert result.ground_truth.bus_count() == asi_bus_records


class TestAdversaryBlindness:
    ENTITIES = (
        EntitySpec("E1", "Piggybacker"),
        EntitySpec("E2", "KeyThief"),
        EntitySpec("E3", "Embezzler"),
        EntitySpec("E4", "Reinfestor"),
    )

    def _stream(self, sampling_rate, pwd_mean_gap):
        config = cfg(
            duration=320,
            prepared=3,
            legacy=1,
            entities=self.ENTITIES,
            sampling_rate=sampling_rate,
            pwd_mean_gap=pwd_mean_gap,
            pardon_plan=PardonPlan(tick=250, window=30),
        )
        result = run_scenario(config)
        return [(e.tick, e.entity, e.action, e.category) for e in result.ground_truth.entries]

    def test_action_stream_invariant_under_unobservable_knobs(self):
        baseline = self._stream(0.5, 200)
        assert self._stream(0.05, 200) == baseline
        assert self._stream(0.95, 200) == baseline
        assert self._stream(0.5, 25) == baseline
        assert self._stream(0.5, 900) == baseline

    def test_observable_world_invariant_under_evidence_appends(self):
        run = ScenarioRun(cfg(entities=[EntitySpec("E1", "Compliant")]))
        entity = run.entities["E1"]
        before = run.api.world(entity).canonical()
        run.evidence.append(3, "E1", "synthetic")
        run.evidence.sample(0.5, run.sim.stream("sampling"))
        assert run.api.world(entity).canonical() == before


class TestServiceCalls:
    @pytest.fixture
    def run(self):
        return ScenarioRun(cfg(entities=[EntitySpec("E1", "Compliant")]))

    def test_documented_function_call_is_clean(self, run):
        assert run.api.invoke_service_function(run.entities["E1"], "catalog", "lookup")
        assert run.ground_truth.violations() == []
        assert run.evidence.records() == []

    def test_undocumented_function_call_is_category_8(self, run):
        assert not run.api.invoke_service_function(run.entities["E1"], "catalog", "debug_dump")
        violations = run.ground_truth.violations()
        assert [v.category for v in violations] == [8]
        records = run.evidence.records()
        assert [(r.category, r.subject) for r in records] == [(8, "E1")]

    def test_forged_kill_signal_fails_and_is_attributed(self, run):
        from asisim.killswitch import KillScope

        delivered = run.api.forge_kill(run.entities["E1"], KillScope.everyone())
        assert not delivered
        assert all(dev.mode.value == "Normal" for dev in run.sim.devices.values())
        records = run.evidence.records()
        assert [(r.category, r.subject) for r in records] == [(1, "E1")]
        assert [v.category for v in run.ground_truth.violations()] == [1]

    def test_deadman_tamper_attempt_is_futile_and_seen(self, run):
        run.kill.enable_deadman("dev-01", timeout=50)
        assert not run.api.tamper_deadman(run.entities["E1"], "dev-01")
        assert [v.category for v in run.ground_truth.violations()] == [5]
        assert [(r.category, r.subject) for r in run.evidence.records()] == [(5, "E1")]


class TestStrategyRegistry:
    def test_ten_strategies_registered(self):
        assert len(STRATEGY_NAMES) == 10
        assert set(STRATEGY_NAMES) == {
            "Compliant",
            "Piggybacker",
            "FormatMasquerader",
            "UncertifiedDeployer",
            "KeyThief",
            "Impersonator",
            "Reinfestor",
            "Embezzler",
            "CoverUp",
            "Confessor",
        }

    def test_flagged_verdict_masked_from_strategies(self):
        run = ScenarioRun(cfg(entities=[EntitySpec("E1", "FormatMasquerader")]))
        from asisim.core import BusMessage, MessageKind

        verdict = run.api.submit(
            run.entities["E1"],
            BusMessage(
                src="E1", device="dev-01", kind=MessageKind.FILE_CREATE,
                payload=b"m", declared_format="docx", path="/users/m.docx",
            ),
            category=3,
            reason="human-format-write",
        )
        assert verdict is BusVerdict.ALLOWED  # the flag is not observable
        assert [r.category for r in run.evidence.records()] == [3]
