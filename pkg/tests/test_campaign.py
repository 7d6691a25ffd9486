import random
from dataclasses import replace

import pytest

from glitchbench.attribution import Observation
from glitchbench.campaign import (
    Attack,
    CampaignConfig,
    ConfigError,
    Outcome,
    classify,
    default_length_range,
    derive_seed,
    golden_duration_ns,
    run_attempt,
    run_campaign,
    sample_params,
)
from glitchbench.faults import SENTINEL, Effect, FaultEvent, FaultSchedule, Surface
from glitchbench.isa import T0, T1
from glitchbench.machine import run
from glitchbench.physics import CLOCKS
from glitchbench.results import render
from glitchbench.testprogs import TestId, build

EMFI = CampaignConfig(Attack.EMFI, TestId.REGISTER_LOOP, 200, CLOCKS["fast_emfi"], 128, 1)
VFI = CampaignConfig(Attack.VFI, TestId.MEMORY_LOOP, 200, CLOCKS["fast_vfi"], 128, 1)


def _golden_with(test, n, **regs):
    p = build(test, n)
    res = run(p)
    for r, v in regs.items():
        res.final_state.regs[int(r[1:])] = v
    return res, p


def test_emfi_parameters_within_ranges():
    rng = random.Random(0)
    duration = golden_duration_ns(EMFI)
    for i in range(3000):
        g = sample_params(EMFI, rng, i)
        assert 40 <= g.power_pct <= 80
        assert 0.35 * duration <= g.delay_ns <= 0.65 * duration
        assert g.pulse_ns == 50


def test_vfi_parameters_within_ranges():
    rng = random.Random(0)
    duration = golden_duration_ns(VFI)
    for i in range(3000):
        g = sample_params(VFI, rng, i)
        assert 1.0 <= g.voltage_v <= 1.6
        assert 40 <= g.length_ns <= 800
        assert 0.35 * duration <= g.delay_ns <= 0.65 * duration


def test_vfi_length_ranges_follow_the_clock():
    assert default_length_range(CLOCKS["slow"])[1] == 12000
    assert default_length_range(CLOCKS["medium"])[1] == 2000
    assert default_length_range(CLOCKS["fast_vfi"])[1] == 800


def test_grid_is_eight_by_eight_at_750um():
    pts = EMFI.grid_points
    assert len(pts) == 64 == len(set(pts))
    assert min(pts) == (0.0, 0.0)
    assert max(pts) == (5250.0, 5250.0)


def test_round_robin_gives_equal_attempts_per_point():
    _, summary = run_campaign(replace(EMFI, attempts=64 * 3))
    assert len(summary.per_point) == 64
    assert all(sum(c.values()) == 3 for c in summary.per_point.values())


def test_classify_golden_is_expected():
    res, p = _golden_with(TestId.REGISTER_LOOP, 10000)
    assert (res.final_state.regs[T0], res.final_state.regs[T1]) == (0x2710, 0)
    assert classify(res, p) is Outcome.EXPECTED


def test_classify_lost_increment_is_successful():
    res, p = _golden_with(TestId.REGISTER_LOOP, 10000, x5=0x270F)
    assert classify(res, p) is Outcome.SUCCESSFUL


def test_classify_corrupted_unused_register_is_successful():
    res, p = _golden_with(TestId.REGISTER_LOOP, 10000, x9=SENTINEL ^ 1)
    assert classify(res, p) is Outcome.SUCCESSFUL


def test_classify_crash_is_crash_mute():
    assert classify(None, build(TestId.REGISTER_LOOP, 5)) is Outcome.CRASH_MUTE


def test_branch_skip_is_successful_and_conserves_the_count():
    p = build(TestId.REGISTER_LOOP, 10000)
    cycle = p.occurrence_cycles(p.loop_start + 2)[7190 - 1]
    res = run(p, FaultSchedule((FaultEvent(cycle, Surface.EXECUTE, Effect.skip()),)))
    assert classify(res, p) is Outcome.SUCCESSFUL
    assert res.final_state.regs[T0] + res.final_state.regs[T1] == 10000


def test_zero_power_attempts_are_expected():
    config = replace(EMFI, power_range=(0.0, 0.0), attempts=64)
    records, summary = run_campaign(config)
    assert summary.totals == {"Expected": 64, "CrashMute": 0, "Successful": 0}
    assert all(r.ground_truth_events == [] and r.t0 == 200 and r.t1 == 0 for r in records)


def test_physics_crash_leaves_counters_unset():
    config = replace(VFI, clock=CLOCKS["slow"], voltage_range=(1.0, 1.0), length_range_ns=(12000.0, 12000.0), attempts=20)
    records, summary = run_campaign(config)
    assert summary.totals["CrashMute"] == 20
    assert all(r.t0 is None and r.t1 is None for r in records)


def test_attempts_are_order_independent():
    records, _ = run_campaign(VFI)
    for i in (0, 17, 127):
        assert render(run_attempt(VFI, i)) == render(records[i])
        assert records[i].seed == derive_seed(VFI.seed, i)


def test_campaign_is_deterministic_across_workers():
    a, _ = run_campaign(EMFI)
    b, _ = run_campaign(EMFI, workers=2, chunk=16)
    assert [render(r) for r in a] == [render(r) for r in b]
    assert [r.index for r in b] == list(range(EMFI.attempts))


def test_seed_changes_the_draws():
    a, _ = run_campaign(replace(EMFI, attempts=16))
    b, _ = run_campaign(replace(EMFI, attempts=16, seed=2))
    assert [r.glitch for r in a] != [r.glitch for r in b]


@pytest.mark.parametrize("config", [EMFI, VFI, replace(VFI, test_id=TestId.UNROLLED_LOOP)])
def test_outcome_partition_and_ground_truth_consistency(config):
    config = replace(config, attempts=400)
    records, summary = run_campaign(config)
    assert sum(summary.totals.values()) == summary.attempts == 400
    assert 0 <= summary.success_rate <= 1
    program = config.program
    golden = Observation.from_state(program, run(program).final_state)
    for r in records:
        if r.outcome is Outcome.CRASH_MUTE:
            continue
        res = run(program, FaultSchedule(tuple(r.ground_truth_events), ground_truth=True))
        assert classify(res, program) is r.outcome
        if r.outcome is Outcome.EXPECTED:
            # sp is not read back, so a corrupted sp can still be Expected
            assert Observation.from_state(program, res.final_state) == golden
        if config.test_id is TestId.UNROLLED_LOOP:
            assert r.t1 is None


def test_config_validation():
    with pytest.raises(ValueError):
        replace(EMFI, attempts=0)
    with pytest.raises(ValueError):
        replace(EMFI, grid=(10, 10))
    with pytest.raises(ValueError):
        replace(EMFI, seed=2**64)
    with pytest.raises(ValueError):
        replace(EMFI, delay_range=(0.7, 0.3))


def test_config_dict_round_trip():
    for config in (EMFI, VFI, replace(VFI, length_range_ns=(100.0, 200.0), output="x.jsonl")):
        assert CampaignConfig.from_dict(config.to_dict()) == config


def test_config_errors_name_the_field():
    d = EMFI.to_dict()
    d["power_range"] = [80, "lots"]
    with pytest.raises(ConfigError) as exc:
        CampaignConfig.from_dict(d)
    assert exc.value.field == "power_range"
    with pytest.raises(ConfigError) as exc:
        CampaignConfig.from_dict({**EMFI.to_dict(), "colour": 3})
    assert exc.value.field == "colour"
