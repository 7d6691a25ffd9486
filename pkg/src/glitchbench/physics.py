"""Glitch physics: from a physical glitch to per-cycle fault and crash odds.

Two susceptibility models are available. ``CHARGE`` is the default: a
fault needs the injected charge to exceed a critical charge that grows with
the clock period (EMFI), or the glitch-induced extra path delay to eat the
timing slack of a clock period (VFI). ``SAMPLING`` treats flip-flops as
having fixed-width susceptibility windows spaced one period apart, so the
hit probability per cycle is simply linear in frequency.

Crashes are modeled as a reset hazard per nanosecond of glitch, so the
per-cycle crash probability scales with the period and long glitches at
slow clocks mostly end in resets.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field, fields, replace
from typing import Union

from .faults import CPU_SURFACES, FaultSchedule, ScheduleBuilder, Surface, sample_event

EMFI_MAX_PULSE_V = 470.0
EMFI_PULSE_NS = 50.0
VFI_NOMINAL_V = 1.8
PACKAGE_UM = 6000.0

SURFACE_ORDER = tuple(Surface)


class Model(enum.Enum):
    SAMPLING = "Sampling"
    CHARGE = "Charge"


@dataclass(frozen=True)
class ClockConfig:
    label: str
    freq_hz: float
    pll_enabled: bool

    @property
    def period_ns(self) -> float:
        return 1e9 / self.freq_hz

    @property
    def mhz(self) -> float:
        return self.freq_hz / 1e6


CLOCKS = {
    "slow": ClockConfig("slow", 16e6, False),
    "medium": ClockConfig("medium", 90e6, True),
    "fast_emfi": ClockConfig("fast_emfi", 320e6, True),
    "fast_vfi": ClockConfig("fast_vfi", 240e6, True),
}
CLOCK_ALIASES = {"fast-em": "fast_emfi", "fast-emfi": "fast_emfi", "fast-vfi": "fast_vfi"}


def clock(label: str) -> ClockConfig:
    key = CLOCK_ALIASES.get(label, label)
    if key not in CLOCKS:
        raise ValueError(f"unknown clock {label!r}; expected one of slow, medium, fast-em, fast-vfi")
    return CLOCKS[key]


@dataclass(frozen=True)
class EMFIGlitch:
    power_pct: float
    delay_ns: float
    x_um: float
    y_um: float
    pulse_ns: float = EMFI_PULSE_NS

    def __post_init__(self):
        if not 0 <= self.power_pct <= 100:
            raise ValueError(f"power_pct out of range: {self.power_pct}")
        if self.delay_ns < 0 or self.pulse_ns < 0:
            raise ValueError("delay and pulse width must be non-negative")

    @property
    def duration_ns(self) -> float:
        return self.pulse_ns

    @property
    def pulse_volts(self) -> float:
        return self.power_pct / 100 * EMFI_MAX_PULSE_V


@dataclass(frozen=True)
class VFIGlitch:
    voltage_v: float
    length_ns: float
    delay_ns: float
    nominal_v: float = VFI_NOMINAL_V

    def __post_init__(self):
        if not 0 <= self.voltage_v <= self.nominal_v:
            raise ValueError(f"glitch voltage out of range: {self.voltage_v}")
        if self.delay_ns < 0 or self.length_ns < 0:
            raise ValueError("delay and length must be non-negative")

    @property
    def duration_ns(self) -> float:
        return self.length_ns

    @property
    def drop_v(self) -> float:
        return self.nominal_v - self.voltage_v


GlitchSpec = Union[EMFIGlitch, VFIGlitch]


@dataclass(frozen=True)
class Region:
    x0: float
    y0: float
    x1: float
    y1: float
    surface: Surface
    weight: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class ChipLayout:
    regions: tuple[Region, ...] = ()
    default_weights: tuple[tuple[Surface, float], ...] = tuple((s, 1.0) for s in Surface)
    package_um: float = PACKAGE_UM

    def __post_init__(self):
        for r in self.regions:
            if r.weight < 0:
                raise ValueError("region weights must be non-negative")
            if not (0 <= r.x0 <= r.x1 <= self.package_um and 0 <= r.y0 <= r.y1 <= self.package_um):
                raise ValueError(f"region {r} exceeds the package")
        if any(w < 0 for _, w in self.default_weights):
            raise ValueError("default weights must be non-negative")

    def to_dict(self) -> dict:
        return {
            "package_um": self.package_um,
            "default_weights": {s.value: w for s, w in self.default_weights},
            "regions": [
                {"rect": [r.x0, r.y0, r.x1, r.y1], "surface": r.surface.value, "weight": r.weight}
                for r in self.regions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChipLayout":
        defaults = dict(DEFAULT_LAYOUT.default_weights)
        for name, w in (d.get("default_weights") or {}).items():
            defaults[Surface(name)] = float(w)
        regions = tuple(
            Region(*map(float, r["rect"]), Surface(r["surface"]), float(r["weight"]))
            for r in d.get("regions", [])
        )
        return cls(regions, tuple(defaults.items()), float(d.get("package_um", PACKAGE_UM)))


# SPI flash pins sit along the lower-right edge in this layout
DEFAULT_LAYOUT = ChipLayout(regions=(Region(3000.0, 0.0, 6000.0, 3000.0, Surface.FLASH_FETCH, 2.5),))


def surface_weights(x_um: float, y_um: float, layout: ChipLayout = DEFAULT_LAYOUT) -> dict[Surface, float]:
    if not (0 <= x_um <= layout.package_um and 0 <= y_um <= layout.package_um):
        raise ValueError(f"point ({x_um}, {y_um}) is outside the package")
    weights = dict(layout.default_weights)
    hit: dict[Surface, float] = {}
    for r in layout.regions:
        if r.contains(x_um, y_um):
            hit[r.surface] = max(hit.get(r.surface, 0.0), r.weight)
    weights.update(hit)
    return weights


@dataclass(frozen=True)
class PhysicsConstants:
    # charge model, EMFI: injected charge proxy Q = pulse volts * pulse ns * weight
    charge_q0: float = 2000.0
    charge_q1: float = 3500.0  # critical charge grows by this much per ns of period
    charge_scale: float = 1000.0
    flash_q_threshold: float = 35000.0  # external SPI bus, independent of the core clock
    flash_scale: float = 1500.0
    emfi_crash_q: float = 17000.0
    emfi_crash_scale: float = 1500.0
    emfi_crash_rate_per_ns: float = 0.004
    # VFI timing-violation model
    vfi_delay_per_volt: float = 8.0
    vfi_slack_margin_ns: float = 2.5
    vfi_timing_scale: float = 1.5
    vfi_timing_p: float = 0.05  # per-cycle fault odds once the slack is fully eaten
    vfi_brownout_p: float = 0.02
    vfi_brownout_v: float = 0.55
    vfi_brownout_scale: float = 0.05
    vfi_crash_v: float = 0.65
    vfi_crash_scale: float = 0.04
    vfi_crash_rate_per_ns: float = 0.012
    # sampling model
    sampling_window_ns: float = 0.2
    sampling_latch_ns: float = 0.3
    sampling_q_threshold: float = 12000.0
    sampling_v_threshold: float = 0.5

    @classmethod
    def from_dict(cls, d: dict | None) -> "PhysicsConstants":
        if not d:
            return cls()
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown physics constants: {sorted(unknown)}")
        return replace(cls(), **{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_CONSTANTS = PhysicsConstants()


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def clamp01(p: float) -> float:
    return 0.0 if p < 0 else 1.0 if p > 1 else p


def affected_cycles(glitch: GlitchSpec, clk: ClockConfig, trace_start_cycle: int = 0) -> tuple[int, float]:
    """First affected cycle and the (fractional) number of cycles the glitch spans."""
    period = clk.period_ns
    return trace_start_cycle + math.floor(glitch.delay_ns / period), glitch.duration_ns / period


def timing_hit_probability(clk: ClockConfig, c: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    return min(1.0, (c.sampling_window_ns + c.sampling_latch_ns) / clk.period_ns)


@dataclass(frozen=True)
class Susceptibility:
    p_fault: dict  # Surface -> per-cycle fault probability
    p_crash: float  # per-cycle crash probability

    @property
    def silent(self) -> bool:
        return self.p_crash == 0 and not any(self.p_fault.values())


def _amplitude_is_zero(glitch: GlitchSpec) -> bool:
    if isinstance(glitch, EMFIGlitch):
        return glitch.power_pct == 0 or glitch.pulse_ns == 0
    return glitch.drop_v <= 0 or glitch.length_ns == 0


def fault_and_crash_probability(
    model: Model,
    glitch: GlitchSpec,
    clk: ClockConfig,
    weights: dict[Surface, float],
    c: PhysicsConstants = DEFAULT_CONSTANTS,
) -> Susceptibility:
    """Per-cycle fault probability for each surface and per-cycle crash probability."""
    if _amplitude_is_zero(glitch):
        return Susceptibility({s: 0.0 for s in SURFACE_ORDER}, 0.0)
    period = clk.period_ns
    p: dict[Surface, float] = {}
    if isinstance(glitch, EMFIGlitch):
        q_unit = glitch.pulse_volts * glitch.pulse_ns
        for s in SURFACE_ORDER:
            q = q_unit * weights.get(s, 0.0)
            if model is Model.CHARGE:
                if s is Surface.FLASH_FETCH:
                    p[s] = logistic((q - c.flash_q_threshold) / c.flash_scale)
                else:
                    q_th = c.charge_q0 + c.charge_q1 * period
                    p[s] = logistic((q - q_th) / c.charge_scale)
            else:
                gate = logistic((q - c.sampling_q_threshold) / c.charge_scale)
                p[s] = gate * timing_hit_probability(clk, c)
        hazard = c.emfi_crash_rate_per_ns * logistic((q_unit - c.emfi_crash_q) / c.emfi_crash_scale)
    else:
        dv = glitch.drop_v
        total_w = sum(weights.values()) or 1.0
        if model is Model.CHARGE:
            extra_delay = c.vfi_delay_per_volt * dv
            slack = period - c.vfi_slack_margin_ns
            total = c.vfi_timing_p * logistic((extra_delay - slack) / c.vfi_timing_scale)
            total += c.vfi_brownout_p * logistic((dv - c.vfi_brownout_v) / c.vfi_brownout_scale)
        else:
            gate = logistic((dv - c.sampling_v_threshold) / c.vfi_brownout_scale)
            total = gate * timing_hit_probability(clk, c)
        total = clamp01(total)
        for s in SURFACE_ORDER:
            p[s] = clamp01(total * weights.get(s, 0.0) / total_w)
        hazard = c.vfi_crash_rate_per_ns * logistic((dv - c.vfi_crash_v) / c.vfi_crash_scale)
    p_crash = -math.expm1(-hazard * period)
    return Susceptibility({s: clamp01(v) for s, v in p.items()}, clamp01(p_crash))


def _cycle_fractions(span: float):
    whole = math.floor(span)
    for _ in range(whole):
        yield 1.0
    if span - whole > 0:
        yield span - whole


def attempt_probabilities(
    model: Model,
    glitch: GlitchSpec,
    clk: ClockConfig,
    weights: dict[Surface, float],
    surfaces=CPU_SURFACES,
    c: PhysicsConstants = DEFAULT_CONSTANTS,
) -> tuple[float, float]:
    """(P(crash), P(at least one fault on ``surfaces`` and no crash)) for one attempt."""
    sus = fault_and_crash_probability(model, glitch, clk, weights, c)
    _, span = affected_cycles(glitch, clk)
    log_no_crash = 0.0
    log_no_fault = 0.0
    for f in _cycle_fractions(span):
        pc = sus.p_crash * f
        log_no_crash += math.log1p(-pc) if pc < 1 else -math.inf
        for s in surfaces:
            pf = sus.p_fault.get(s, 0.0) * f
            log_no_fault += math.log1p(-pf) if pf < 1 else -math.inf
    no_crash = math.exp(log_no_crash)
    return 1.0 - no_crash, no_crash * -math.expm1(log_no_fault)


def sample_schedule(
    rng: random.Random,
    model: Model,
    glitch: GlitchSpec,
    clk: ClockConfig,
    layout: ChipLayout,
    golden_cycles: int,
    c: PhysicsConstants = DEFAULT_CONSTANTS,
) -> tuple[FaultSchedule, bool]:
    """Draw the concrete events of one glitch. Returns (schedule, crashed)."""
    if isinstance(glitch, EMFIGlitch):
        weights = surface_weights(glitch.x_um, glitch.y_um, layout)
    else:
        weights = dict(layout.default_weights)
    first, span = affected_cycles(glitch, clk)
    if first > golden_cycles:
        raise ValueError("glitch delay falls after the end of the test")
    sus = fault_and_crash_probability(model, glitch, clk, weights, c)
    builder = ScheduleBuilder()
    if sus.silent:
        return builder.build(), False
    for j, f in enumerate(_cycle_fractions(span)):
        cycle = first + j
        if rng.random() < sus.p_crash * f:
            return builder.build(), True
        for s in SURFACE_ORDER:
            if rng.random() < sus.p_fault[s] * f:
                builder.add(sample_event(rng, cycle, s))
    return builder.build(), False
