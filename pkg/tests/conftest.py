import random

from glitchbench.campaign import Attack, AttemptRecord, Outcome
from glitchbench.faults import Surface, sample_event
from glitchbench.physics import CLOCKS, EMFIGlitch, VFIGlitch
from glitchbench.testprogs import TestId

LABEL_KINDS = ["SkipAdd", "SkipSub", "SkipBranch", "ManipulateAdd", "MemoryCorruption", "RegisterCorruption"]


def random_record(rng: random.Random, index: int = 0) -> AttemptRecord:
    """An arbitrary but valid record, for serialization round trips."""
    attack = rng.choice(list(Attack))
    test = rng.choice(list(TestId))
    outcome = rng.choice(list(Outcome))
    if rng.random() < 0.1:
        glitch = None
    elif attack is Attack.EMFI:
        glitch = EMFIGlitch(rng.uniform(40, 80), rng.uniform(0, 1e6), rng.uniform(0, 6000), rng.uniform(0, 6000))
    else:
        glitch = VFIGlitch(rng.uniform(1.0, 1.6), rng.uniform(40, 12000), rng.uniform(0, 1e6))
    has_regs = outcome is not Outcome.CRASH_MUTE
    t1 = rng.getrandbits(32) if has_regs and test is not TestId.UNROLLED_LOOP else None
    return AttemptRecord(
        index=index,
        seed=rng.getrandbits(64),
        attack=attack,
        clock=rng.choice(list(CLOCKS.values())),
        test_id=test,
        n=rng.randint(1, 10000),
        outcome=outcome,
        glitch=glitch,
        t0=rng.getrandbits(32) if has_regs else None,
        t1=t1,
        corrupted_registers=[(rng.randint(1, 31), rng.getrandbits(32)) for _ in range(rng.randint(0, 3))],
        ground_truth_events=[sample_event(rng, rng.randrange(10**6), rng.choice(list(Surface))) for _ in range(rng.randint(0, 4))],
        labels=[rng.sample(LABEL_KINDS, rng.randint(1, 3)) for _ in range(rng.randint(0, 3))],
        flash_fetch_count=rng.randint(0, 2000) if has_regs else None,
    )


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
