import random

import pytest
from hypothesis import given, strategies as st

from glitchbench.faults import (
    DATA_SURFACES,
    INSTRUCTION_SURFACES,
    P_SKIP,
    SENTINEL,
    Effect,
    EffectKind,
    FaultEvent,
    FaultSchedule,
    Surface,
    apply_effect,
    effect_valid_for,
    sample_effect,
    sample_event,
)

masks = st.integers(1, 0xFFFFFFFF).filter(lambda m: bin(m).count("1") <= 4)
words = st.integers(0, 0xFFFFFFFF)


def test_single_bit_flip():
    assert apply_effect(Effect.flip(0x1), 0x2710) == 0x2711


@given(words)
def test_replace_returns_the_value(datum):
    assert apply_effect(Effect.replace(SENTINEL), datum) == SENTINEL


@given(masks, words)
def test_flip_is_an_involution(mask, datum):
    e = Effect.flip(mask)
    assert apply_effect(e, apply_effect(e, datum)) == datum


def test_skip_is_not_a_data_transform():
    with pytest.raises(ValueError):
        apply_effect(Effect.skip(), 0)


@pytest.mark.parametrize("mask", [0, 0x1F, 1 << 32])
def test_flip_mask_bounds(mask):
    with pytest.raises(ValueError):
        Effect.flip(mask)


def test_event_surface_rules():
    with pytest.raises(ValueError):
        FaultEvent(0, Surface.DCACHE_LOAD, Effect.skip())
    with pytest.raises(ValueError):
        FaultEvent(0, Surface.EXECUTE, Effect.replace(1))
    with pytest.raises(ValueError):
        FaultEvent(0, Surface.REGISTER_FILE, Effect.flip(1))
    with pytest.raises(ValueError):
        FaultEvent(0, Surface.EXECUTE, Effect.flip(1), target_reg=5)
    FaultEvent(0, Surface.REGISTER_FILE, Effect.replace(SENTINEL), target_reg=6)


def test_schedule_sorted_and_unique_per_cycle_and_surface():
    a = FaultEvent(9, Surface.EXECUTE, Effect.skip())
    b = FaultEvent(3, Surface.DCACHE_LOAD, Effect.flip(4))
    c = FaultEvent(3, Surface.EXECUTE, Effect.flip(4))
    assert [e.cycle for e in FaultSchedule((a, b, c)).events] == [3, 3, 9]
    with pytest.raises(ValueError):
        FaultSchedule((a, FaultEvent(9, Surface.EXECUTE, Effect.flip(1))))


@given(st.integers(0, 2**32), st.sampled_from(list(Surface)))
def test_event_dict_round_trip(seed, surface):
    ev = sample_event(random.Random(seed), seed % 1000, surface)
    assert FaultEvent.from_dict(ev.to_dict()) == ev


def test_data_surfaces_never_skip():
    rng = random.Random(7)
    for s in DATA_SURFACES:
        assert all(sample_effect(rng, s).kind is not EffectKind.SKIP for _ in range(5000))


def test_skip_fraction_on_execute_stage():
    rng = random.Random(11)
    n = 100_000
    skips = sum(sample_effect(rng, Surface.EXECUTE).kind is EffectKind.SKIP for _ in range(n))
    assert abs(skips / n - P_SKIP) <= 0.02


def test_sampled_masks_have_at_most_four_bits():
    rng = random.Random(3)
    seen = set()
    for i in range(20000):
        e = sample_effect(rng, list(Surface)[i % len(Surface)])
        if e.kind is EffectKind.FLIP:
            assert 1 <= bin(e.value).count("1") <= 4
            seen.add(bin(e.value).count("1"))
    assert seen == {1, 2, 3, 4}


def test_sampled_effects_valid_for_surface():
    rng = random.Random(5)
    for i in range(20000):
        s = list(Surface)[i % len(Surface)]
        assert effect_valid_for(sample_effect(rng, s), s)


def test_replacements_favor_the_sentinel():
    rng = random.Random(9)
    values = [e.value for e in (sample_effect(rng, Surface.DCACHE_LOAD) for _ in range(20000)) if e.kind is EffectKind.REPLACE]
    assert values.count(SENTINEL) > len(values) / 3


def test_sampling_is_deterministic():
    for s in INSTRUCTION_SURFACES | DATA_SURFACES:
        a, b = random.Random(42), random.Random(42)
        assert [sample_effect(a, s) for _ in range(100)] == [sample_effect(b, s) for _ in range(100)]
