"""Fault effects, the surfaces they land on, and schedules of injected events."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .isa import MASK32

SENTINEL = 0xDEADBEEF
MAX_FLIPS = 4
P_SKIP = 0.3
P_FLIP_DATA = 0.8
P_SENTINEL_REPLACE = 0.5


class Surface(enum.Enum):
    FLASH_FETCH = "FlashFetch"
    ICACHE_FETCH = "ICacheFetch"
    EXECUTE = "ExecuteStage"
    DCACHE_LOAD = "DCacheLoad"
    DCACHE_STORE = "DCacheStore"
    REGISTER_FILE = "RegisterFile"

    @property
    def is_instruction_path(self) -> bool:
        return self in INSTRUCTION_SURFACES


INSTRUCTION_SURFACES = frozenset({Surface.FLASH_FETCH, Surface.ICACHE_FETCH, Surface.EXECUTE})
DATA_SURFACES = frozenset({Surface.DCACHE_LOAD, Surface.DCACHE_STORE, Surface.REGISTER_FILE})
CPU_SURFACES = frozenset(Surface) - {Surface.FLASH_FETCH}


class EffectKind(enum.Enum):
    SKIP = "SkipInstruction"
    FLIP = "FlipBits"
    REPLACE = "ReplaceValue"


@dataclass(frozen=True)
class Effect:
    kind: EffectKind
    value: int = 0  # xor mask for FLIP, replacement word for REPLACE

    def __post_init__(self):
        if self.kind is EffectKind.FLIP:
            if not 0 < self.value <= MASK32 or bin(self.value).count("1") > MAX_FLIPS:
                raise ValueError(f"FlipBits mask must have 1..{MAX_FLIPS} bits set: {self.value:#x}")
        elif self.kind is EffectKind.REPLACE:
            if not 0 <= self.value <= MASK32:
                raise ValueError(f"ReplaceValue out of range: {self.value:#x}")

    @classmethod
    def skip(cls) -> "Effect":
        return cls(EffectKind.SKIP)

    @classmethod
    def flip(cls, mask: int) -> "Effect":
        return cls(EffectKind.FLIP, mask)

    @classmethod
    def replace(cls, value: int) -> "Effect":
        return cls(EffectKind.REPLACE, value)

    def __str__(self) -> str:
        if self.kind is EffectKind.SKIP:
            return "skip"
        if self.kind is EffectKind.FLIP:
            return f"flip({self.value:#x})"
        return f"replace({self.value:#010x})"


def apply_effect(effect: Effect, datum: int) -> int:
    """Transform a 32-bit datum. Skips are not data transforms and are rejected."""
    if effect.kind is EffectKind.FLIP:
        return (datum ^ effect.value) & MASK32
    if effect.kind is EffectKind.REPLACE:
        return effect.value
    raise ValueError("SkipInstruction is not a data transform")


def effect_valid_for(effect: Effect, surface: Surface) -> bool:
    if effect.kind is EffectKind.SKIP:
        return surface in INSTRUCTION_SURFACES
    if effect.kind is EffectKind.REPLACE:
        return surface in DATA_SURFACES
    return True


@dataclass(frozen=True)
class FaultEvent:
    cycle: int
    surface: Surface
    effect: Effect
    target_reg: int | None = None

    def __post_init__(self):
        if self.cycle < 0:
            raise ValueError("event cycle must be non-negative")
        if not effect_valid_for(self.effect, self.surface):
            raise ValueError(f"{self.effect.kind.value} is not valid on {self.surface.value}")
        if self.surface is Surface.REGISTER_FILE:
            if self.target_reg is None or not 0 <= self.target_reg < 32:
                raise ValueError("RegisterFile events need a target register")
        elif self.target_reg is not None:
            raise ValueError("target_reg only applies to RegisterFile events")

    def to_dict(self) -> dict:
        d = {"cycle": self.cycle, "surface": self.surface.value, "effect": self.effect.kind.value}
        if self.effect.kind is EffectKind.FLIP:
            d["mask"] = f"{self.effect.value:#010x}"
        elif self.effect.kind is EffectKind.REPLACE:
            d["value"] = f"{self.effect.value:#010x}"
        if self.target_reg is not None:
            d["target_reg"] = self.target_reg
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaultEvent":
        kind = EffectKind(d["effect"])
        if kind is EffectKind.FLIP:
            effect = Effect.flip(int(d["mask"], 16))
        elif kind is EffectKind.REPLACE:
            effect = Effect.replace(int(d["value"], 16))
        else:
            effect = Effect.skip()
        return cls(int(d["cycle"]), Surface(d["surface"]), effect, d.get("target_reg"))


@dataclass(frozen=True)
class FaultSchedule:
    events: tuple[FaultEvent, ...] = ()
    ground_truth: bool = False

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: (e.cycle, e.surface.value)))
        seen = set()
        for e in events:
            key = (e.cycle, e.surface)
            if key in seen:
                raise ValueError(f"two events on {e.surface.value} at cycle {e.cycle}")
            seen.add(key)
        object.__setattr__(self, "events", events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def surfaces(self) -> frozenset[Surface]:
        return frozenset(e.surface for e in self.events)


EMPTY_SCHEDULE = FaultSchedule()


def random_mask(rng: random.Random, max_flips: int = MAX_FLIPS) -> int:
    count = rng.randint(1, max_flips)
    mask = 0
    for bit in rng.sample(range(32), count):
        mask |= 1 << bit
    return mask


def sample_effect(rng: random.Random, surface: Surface, p_skip: float = P_SKIP) -> Effect:
    """Draw one effect appropriate for ``surface``."""
    if surface in INSTRUCTION_SURFACES:
        if rng.random() < p_skip:
            return Effect.skip()
        return Effect.flip(random_mask(rng))
    if rng.random() < P_FLIP_DATA:
        return Effect.flip(random_mask(rng))
    if rng.random() < P_SENTINEL_REPLACE:
        return Effect.replace(SENTINEL)
    return Effect.replace(rng.getrandbits(32))


def sample_event(rng: random.Random, cycle: int, surface: Surface, p_skip: float = P_SKIP) -> FaultEvent:
    effect = sample_effect(rng, surface, p_skip)
    target = rng.randrange(1, 32) if surface is Surface.REGISTER_FILE else None
    return FaultEvent(cycle, surface, effect, target)


@dataclass
class ScheduleBuilder:
    """Accumulates events; later duplicates on the same (cycle, surface) are dropped."""

    events: dict = field(default_factory=dict)

    def add(self, event: FaultEvent) -> None:
        self.events.setdefault((event.cycle, event.surface), event)

    def build(self, ground_truth: bool = True) -> FaultSchedule:
        return FaultSchedule(tuple(self.events.values()), ground_truth)
