"""Fault-injection campaigns: parameter sampling, attempts, classification, summaries."""

from __future__ import annotations

import enum
import hashlib
import random
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .faults import FaultEvent, FaultSchedule
from .isa import T0, T1
from .machine import RunResult, Termination, run
from .physics import (
    DEFAULT_CONSTANTS,
    DEFAULT_LAYOUT,
    ChipLayout,
    ClockConfig,
    EMFIGlitch,
    GlitchSpec,
    Model,
    PhysicsConstants,
    VFIGlitch,
    clock,
    sample_schedule,
)
from .testprogs import TestId, TestProgram, build


class Attack(enum.Enum):
    EMFI = "EMFI"
    VFI = "VFI"


class Outcome(enum.Enum):
    EXPECTED = "Expected"
    CRASH_MUTE = "CrashMute"
    SUCCESSFUL = "Successful"


VFI_MAX_LENGTH_NS = {"slow": 12000.0, "medium": 2000.0, "fast_vfi": 800.0, "fast_emfi": 800.0}


def default_length_range(clk: ClockConfig) -> tuple[float, float]:
    hi = VFI_MAX_LENGTH_NS[clk.label]
    return (hi / 20, hi)


@dataclass(frozen=True)
class CampaignConfig:
    attack: Attack
    test_id: TestId
    n: int
    clock: ClockConfig
    attempts: int
    seed: int
    model: Model = Model.CHARGE
    power_range: tuple[float, float] = (40.0, 80.0)
    delay_range: tuple[float, float] = (0.35, 0.65)  # fraction of the golden duration
    grid: tuple[int, int] = (8, 8)
    grid_step_um: float = 750.0
    grid_origin_um: tuple[float, float] = (0.0, 0.0)
    voltage_range: tuple[float, float] = (1.0, 1.6)
    length_range_ns: tuple[float, float] | None = None
    layout: ChipLayout = DEFAULT_LAYOUT
    constants: PhysicsConstants = DEFAULT_CONSTANTS
    output: str | None = None

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        lo, hi = self.delay_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("delay_range must be fractions within [0, 1]")
        if self.attack is Attack.EMFI:
            cols, rows = self.grid
            ox, oy = self.grid_origin_um
            far_x = ox + (cols - 1) * self.grid_step_um
            far_y = oy + (rows - 1) * self.grid_step_um
            pkg = self.layout.package_um
            if cols < 1 or rows < 1 or not (0 <= ox and 0 <= oy and far_x <= pkg and far_y <= pkg):
                raise ValueError("grid points must lie within the package")
        if self.length_range_ns is None:
            object.__setattr__(self, "length_range_ns", default_length_range(self.clock))

    @property
    def program(self) -> TestProgram:
        return build(self.test_id, self.n)

    @property
    def grid_points(self) -> list[tuple[float, float]]:
        cols, rows = self.grid
        ox, oy = self.grid_origin_um
        return [(ox + self.grid_step_um * (i % cols), oy + self.grid_step_um * (i // cols)) for i in range(cols * rows)]

    def to_dict(self) -> dict:
        d = {
            "attack": self.attack.value,
            "test_id": self.test_id.value,
            "n": self.n,
            "clock": self.clock.label,
            "attempts": self.attempts,
            "seed": self.seed,
            "model": self.model.value,
            "delay_range": list(self.delay_range),
        }
        if self.attack is Attack.EMFI:
            d.update(
                power_range=list(self.power_range),
                grid=list(self.grid),
                grid_step_um=self.grid_step_um,
                grid_origin_um=list(self.grid_origin_um),
                layout=self.layout.to_dict(),
            )
        else:
            d.update(voltage_range=list(self.voltage_range), length_range_ns=list(self.length_range_ns))
        if self.constants != DEFAULT_CONSTANTS:
            d["constants"] = self.constants.to_dict()
        if self.output:
            d["output"] = self.output
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        if not isinstance(d, dict):
            raise ConfigError(None, "config must be a mapping of field names to values")
        unknown = sorted(set(d) - CONFIG_FIELDS)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        for name in ("attack", "test_id", "n", "clock", "attempts", "seed"):
            if name not in d:
                raise ConfigError(name, "missing required field")
        parsers = {
            "attack": lambda v: Attack(str(v).upper()),
            "test_id": TestId.parse,
            "n": int,
            "clock": lambda v: clock(str(v)),
            "attempts": int,
            "seed": int,
            "model": lambda v: Model(str(v).capitalize()),
            "power_range": _float_pair,
            "delay_range": _float_pair,
            "grid_origin_um": _float_pair,
            "voltage_range": _float_pair,
            "length_range_ns": _float_pair,
            "grid": lambda v: tuple(int(x) for x in _pair(v)),
            "grid_step_um": float,
            "layout": ChipLayout.from_dict,
            "constants": PhysicsConstants.from_dict,
            "output": lambda v: str(v) if v else None,
        }
        kw = {}
        for name, value in d.items():
            try:
                kw[name] = parsers[name](value)
            except (ValueError, TypeError, KeyError, AttributeError) as exc:
                raise ConfigError(name, f"invalid value {value!r}: {exc}") from exc
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigError(None, str(exc)) from exc


CONFIG_FIELDS = frozenset(
    {
        "attack", "test_id", "n", "clock", "attempts", "seed", "model", "power_range", "delay_range",
        "grid", "grid_step_um", "grid_origin_um", "voltage_range", "length_range_ns", "layout",
        "constants", "output",
    }
)


class ConfigError(ValueError):
    def __init__(self, field_name: str | None, message: str):
        super().__init__(f"{field_name}: {message}" if field_name else message)
        self.field = field_name
        self.message = message


def _pair(v) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError("expected a two-element list")
    return tuple(v)


def _float_pair(v) -> tuple[float, float]:
    lo, hi = (float(x) for x in _pair(v))
    if lo > hi:
        raise ValueError("lower bound exceeds upper bound")
    return lo, hi


@dataclass
class AttemptRecord:
    index: int
    seed: int
    attack: Attack
    clock: ClockConfig
    test_id: TestId
    n: int
    outcome: Outcome
    glitch: GlitchSpec | None  # None for transcribed observations without glitch parameters
    t0: int | None = None
    t1: int | None = None
    corrupted_registers: list[tuple[int, int]] = field(default_factory=list)
    ground_truth_events: list[FaultEvent] = field(default_factory=list)
    labels: list[list[str]] = field(default_factory=list)
    flash_fetch_count: int | None = None
    extra: dict = field(default_factory=dict)  # unknown keys carried through files untouched


def derive_seed(seed: int, index: int) -> int:
    """Counter-mode mixing of (campaign seed, attempt index) into a 64-bit seed."""
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def golden_duration_ns(config: CampaignConfig) -> float:
    return config.program.golden_cycles * config.clock.period_ns


def sample_params(config: CampaignConfig, rng: random.Random, attempt_index: int) -> GlitchSpec:
    duration = golden_duration_ns(config)
    lo, hi = config.delay_range
    if config.attack is Attack.EMFI:
        points = config.grid_points
        x, y = points[attempt_index % len(points)]
        power = rng.uniform(*config.power_range)
        delay = rng.uniform(lo, hi) * duration
        return EMFIGlitch(power_pct=power, delay_ns=delay, x_um=x, y_um=y)
    voltage = rng.uniform(*config.voltage_range)
    length = rng.uniform(*config.length_range_ns)
    delay = rng.uniform(lo, hi) * duration
    return VFIGlitch(voltage_v=voltage, length_ns=length, delay_ns=delay)


def classify(result: RunResult | None, program: TestProgram) -> Outcome:
    """``None`` stands for a physics-level crash (the target reset)."""
    if result is None or result.termination is not Termination.COMPLETED:
        return Outcome.CRASH_MUTE
    return Outcome.EXPECTED if program.expected(result.final_state) else Outcome.SUCCESSFUL


def run_attempt(config: CampaignConfig, attempt_index: int) -> AttemptRecord:
    program = config.program
    seed = derive_seed(config.seed, attempt_index)
    rng = random.Random(seed)
    glitch = sample_params(config, rng, attempt_index)
    schedule, crashed = sample_schedule(
        rng, config.model, glitch, config.clock, config.layout, program.golden_cycles, config.constants
    )
    record = AttemptRecord(
        index=attempt_index,
        seed=seed,
        attack=config.attack,
        clock=config.clock,
        test_id=config.test_id,
        n=config.n,
        outcome=Outcome.CRASH_MUTE,
        glitch=glitch,
        ground_truth_events=list(schedule.events),
    )
    if crashed:
        return record
    result = run(program, FaultSchedule(schedule.events, ground_truth=True))
    record.outcome = classify(result, program)
    if record.outcome is not Outcome.CRASH_MUTE:
        state = result.final_state
        record.t0 = state.regs[T0]
        record.t1 = state.regs[T1] if config.test_id is not TestId.UNROLLED_LOOP else None
        record.corrupted_registers = program.corrupted_registers(state)
        record.flash_fetch_count = state.flash_fetch_count
    return record


def _run_chunk(args) -> list[AttemptRecord]:
    config, indices = args
    return [run_attempt(config, i) for i in indices]


@dataclass
class CampaignSummary:
    attempts: int
    totals: dict[str, int]
    success_rate: float
    per_point: dict[tuple[float, float], dict[str, int]] = field(default_factory=dict)
    marginals: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "totals": self.totals,
            "success_rate": self.success_rate,
            "per_point": [{"x_um": x, "y_um": y, **c} for (x, y), c in sorted(self.per_point.items())],
            "marginals": self.marginals,
        }


def _bin_label(value: float, lo: float, hi: float, bins: int) -> str:
    width = (hi - lo) / bins
    i = min(bins - 1, max(0, int((value - lo) // width))) if width > 0 else 0
    return f"{lo + i * width:.4g}-{lo + (i + 1) * width:.4g}"


def summarize(records: list[AttemptRecord]) -> CampaignSummary:
    totals = Counter({o.value: 0 for o in Outcome})
    totals.update(r.outcome.value for r in records)
    per_point: dict = defaultdict(lambda: {o.value: 0 for o in Outcome})
    marginals: dict = defaultdict(lambda: defaultdict(lambda: {o.value: 0 for o in Outcome}))
    for r in records:
        g = r.glitch
        if g is None:
            continue
        if isinstance(g, EMFIGlitch):
            per_point[(g.x_um, g.y_um)][r.outcome.value] += 1
            marginals["power_pct"][_bin_label(g.power_pct, 40, 80, 8)][r.outcome.value] += 1
        else:
            marginals["voltage_v"][_bin_label(g.voltage_v, 1.0, 1.6, 6)][r.outcome.value] += 1
    n = len(records)
    return CampaignSummary(
        attempts=n,
        totals=dict(totals),
        success_rate=totals[Outcome.SUCCESSFUL.value] / n if n else 0.0,
        per_point=dict(per_point),
        marginals={k: {b: dict(c) for b, c in sorted(v.items())} for k, v in marginals.items()},
    )


def run_campaign(config: CampaignConfig, workers: int = 1, chunk: int = 250) -> tuple[list[AttemptRecord], CampaignSummary]:
    """Run every attempt of ``config``; records come back ordered by index."""
    program = config.program
    _ = program.golden_cycles, program.warm_icache  # compute once before forking
    indices = list(range(config.attempts))
    if workers <= 1:
        records = [run_attempt(config, i) for i in indices]
    else:
        chunks = [(config, indices[i:i + chunk]) for i in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for part in pool.map(_run_chunk, chunks) for r in part]
    records.sort(key=lambda r: r.index)
    summary = summarize(records)
    if config.output:
        from .results import write_results

        write_results(Path(config.output), records)
    return records, summary


def with_seed(config: CampaignConfig, seed: int) -> CampaignConfig:
    return replace(config, seed=seed)
