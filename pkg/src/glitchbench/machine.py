"""Cycle-stepped RV32I core with a direct-mapped instruction cache.

Timing model: one cycle per retired instruction plus one extra cycle when
the fetch misses the instruction cache and has to go out to flash.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .faults import EMPTY_SCHEDULE, EffectKind, FaultEvent, FaultSchedule, Surface, apply_effect
from .isa import MASK32, SP, Kind, decode, to_signed

FLASH_BASE = 0x20400000
RAM_BASE = 0x80000000
RAM_SIZE = 4096
STACK_TOP = RAM_BASE + RAM_SIZE

ICACHE_BYTES = 16384
ICACHE_LINE = 32
MISS_PENALTY = 1
RESET_REG_VALUE = 0


class TrapCause(enum.Enum):
    ILLEGAL_INSTRUCTION = "IllegalInstruction"
    MEMORY_FAULT = "MemoryFault"
    PC_OUT_OF_RANGE = "PcOutOfRange"


class Termination(enum.Enum):
    COMPLETED = "Completed"
    TRAPPED = "Trapped"
    BUDGET_EXCEEDED = "BudgetExceeded"


class Trap(Exception):
    def __init__(self, cause: TrapCause, detail: str = ""):
        super().__init__(f"{cause.value}: {detail}" if detail else cause.value)
        self.cause = cause


class ICache:
    """Direct-mapped tag store. Data is not modeled: flash is read-only."""

    def __init__(self, capacity: int = ICACHE_BYTES, line_size: int = ICACHE_LINE):
        if capacity % line_size or line_size & (line_size - 1):
            raise ValueError("capacity must be a multiple of a power-of-two line size")
        self.capacity = capacity
        self.line_size = line_size
        self.line_shift = line_size.bit_length() - 1
        self.n_lines = capacity // line_size
        self.tags: list[int | None] = [None] * self.n_lines

    def copy(self) -> "ICache":
        c = ICache.__new__(ICache)
        c.capacity, c.line_size, c.line_shift, c.n_lines = self.capacity, self.line_size, self.line_shift, self.n_lines
        c.tags = self.tags[:]
        return c

    def contains(self, addr: int) -> bool:
        line = addr >> self.line_shift
        return self.tags[line % self.n_lines] == line

    def lookup(self, addr: int) -> bool:
        """True on hit. A miss installs the line."""
        line = addr >> self.line_shift
        idx = line % self.n_lines
        if self.tags[idx] == line:
            return True
        self.tags[idx] = line
        return False

    def __eq__(self, other) -> bool:
        return isinstance(other, ICache) and self.tags == other.tags and self.line_size == other.line_size


@dataclass
class MachineState:
    pc: int
    regs: list[int]
    text: Sequence[int]
    ram: bytearray
    icache: ICache
    cycle: int = 0
    flash_fetch_count: int = 0
    halted: bool = False
    text_base: int = FLASH_BASE

    @classmethod
    def boot(cls, text: Sequence[int], icache: ICache | None = None) -> "MachineState":
        regs = [RESET_REG_VALUE] * 32
        regs[0] = 0
        regs[SP] = STACK_TOP
        return cls(
            pc=FLASH_BASE,
            regs=regs,
            text=text,
            ram=bytearray(RAM_SIZE),
            icache=icache.copy() if icache is not None else ICache(),
        )

    @property
    def text_end(self) -> int:
        return self.text_base + 4 * len(self.text)

    def copy(self) -> "MachineState":
        return MachineState(
            self.pc, self.regs[:], self.text, bytearray(self.ram), self.icache.copy(),
            self.cycle, self.flash_fetch_count, self.halted, self.text_base,
        )

    def load_word(self, addr: int) -> int:
        if addr & 3:
            raise Trap(TrapCause.MEMORY_FAULT, f"misaligned load {addr:#010x}")
        off = addr - RAM_BASE
        if 0 <= off < RAM_SIZE:
            return int.from_bytes(self.ram[off:off + 4], "little")
        off = addr - self.text_base
        if 0 <= off < 4 * len(self.text):
            return self.text[off >> 2]
        raise Trap(TrapCause.MEMORY_FAULT, f"load from {addr:#010x}")

    def store_word(self, addr: int, value: int) -> None:
        off = addr - RAM_BASE
        if addr & 3 or not 0 <= off < RAM_SIZE:
            raise Trap(TrapCause.MEMORY_FAULT, f"store to {addr:#010x}")
        self.ram[off:off + 4] = (value & MASK32).to_bytes(4, "little")

    def observable(self) -> tuple:
        """Architectural state compared when checking determinism."""
        return (self.pc, tuple(self.regs), bytes(self.ram), tuple(self.icache.tags),
                self.cycle, self.flash_fetch_count, self.halted)


def fetch_cost(state: MachineState) -> int:
    return 1 if state.icache.contains(state.pc) else 1 + MISS_PENALTY


def step(state: MachineState, overlays: Iterable[FaultEvent] = ()) -> MachineState:
    """Retire one instruction in place, applying ``overlays`` to it.

    Raises Trap. The cycle counter advances even when the instruction traps.
    """
    if state.halted:
        raise ValueError("machine is halted")
    pc = state.pc
    off = pc - state.text_base
    if pc & 3 or not 0 <= off < 4 * len(state.text):
        raise Trap(TrapCause.PC_OUT_OF_RANGE, f"pc={pc:#010x}")
    hit = state.icache.lookup(pc)
    if not hit:
        state.flash_fetch_count += 1
    state.cycle += 1 if hit else 1 + MISS_PENALTY
    word = state.text[off >> 2]
    regs = state.regs

    skip = False
    load_fx = store_fx = None
    for ev in overlays:
        s = ev.surface
        if s is Surface.FLASH_FETCH and hit:
            continue  # nothing crossed the flash bus for this fetch
        if s is Surface.FLASH_FETCH or s is Surface.ICACHE_FETCH or s is Surface.EXECUTE:
            if ev.effect.kind is EffectKind.SKIP:
                skip = True
            else:
                word = apply_effect(ev.effect, word)
        elif s is Surface.REGISTER_FILE:
            if ev.target_reg:
                regs[ev.target_reg] = apply_effect(ev.effect, regs[ev.target_reg])
        elif s is Surface.DCACHE_LOAD:
            load_fx = ev.effect
        else:
            store_fx = ev.effect

    next_pc = pc + 4
    if not skip:
        ins = decode(word)
        k = ins.kind
        if k is Kind.ADDI:
            regs[ins.rd] = (regs[ins.rs1] + ins.imm) & MASK32
        elif k is Kind.ADD:
            regs[ins.rd] = (regs[ins.rs1] + regs[ins.rs2]) & MASK32
        elif k is Kind.SUB:
            regs[ins.rd] = (regs[ins.rs1] - regs[ins.rs2]) & MASK32
        elif k is Kind.LW:
            value = state.load_word((regs[ins.rs1] + ins.imm) & MASK32)
            if load_fx is not None:
                value = apply_effect(load_fx, value)
            regs[ins.rd] = value
        elif k is Kind.SW:
            value = regs[ins.rs2]
            if store_fx is not None:
                value = apply_effect(store_fx, value)
            state.store_word((regs[ins.rs1] + ins.imm) & MASK32, value)
        elif k is Kind.LUI:
            regs[ins.rd] = (ins.imm << 12) & MASK32
        elif k is Kind.BLT:
            if to_signed(regs[ins.rs1]) < to_signed(regs[ins.rs2]):
                next_pc = (pc + ins.imm) & MASK32
        elif k is Kind.BGE:
            if to_signed(regs[ins.rs1]) >= to_signed(regs[ins.rs2]):
                next_pc = (pc + ins.imm) & MASK32
        elif k is Kind.BNE:
            if regs[ins.rs1] != regs[ins.rs2]:
                next_pc = (pc + ins.imm) & MASK32
        elif k is Kind.JAL:
            regs[ins.rd] = next_pc
            next_pc = (pc + ins.imm) & MASK32
        elif k is Kind.NOP:
            pass
        else:
            regs[0] = 0
            raise Trap(TrapCause.ILLEGAL_INSTRUCTION, f"{word:#010x} at {pc:#010x}")
        regs[0] = 0
    state.pc = next_pc
    if next_pc == state.text_end:
        state.halted = True
    return state


class Program(Protocol):
    """What ``run`` needs from a test program."""

    text: Sequence[int]

    def initial_state(self, warm: bool = True) -> MachineState: ...

    def fast_forward(self, state: MachineState, limit_cycle: float) -> bool: ...

    @property
    def default_budget(self) -> int: ...


@dataclass
class RunResult:
    termination: Termination
    final_state: MachineState
    trap_cause: TrapCause | None = None

    @property
    def completed(self) -> bool:
        return self.termination is Termination.COMPLETED


def run_state(
    state: MachineState,
    schedule: FaultSchedule = EMPTY_SCHEDULE,
    budget: int = 10**9,
    program: Program | None = None,
) -> RunResult:
    """Step ``state`` until it halts or traps, at most ``budget`` cycles.

    When ``program`` is given, its loop summary may skip whole fault-free
    iterations; the result is identical to plain stepping.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    events = schedule.events
    n_events = len(events)
    i = 0
    ff = program.fast_forward if program is not None else None
    try:
        while not state.halted:
            cycle = state.cycle
            if cycle >= budget:
                return RunResult(Termination.BUDGET_EXCEEDED, state)
            while i < n_events and events[i].cycle < cycle:
                i += 1  # scheduled inside an instruction that already retired
            if ff is not None:
                limit = min(budget, events[i].cycle if i < n_events else math.inf)
                if ff(state, limit):
                    continue
            if i < n_events and events[i].cycle < cycle + fetch_cost(state):
                end = cycle + fetch_cost(state)
                j = i
                while j < n_events and events[j].cycle < end:
                    j += 1
                step(state, events[i:j])
                i = j
            else:
                step(state)
    except Trap as trap:
        return RunResult(Termination.TRAPPED, state, trap.cause)
    return RunResult(Termination.COMPLETED, state)


def run(
    program: Program,
    schedule: FaultSchedule = EMPTY_SCHEDULE,
    budget: int | None = None,
    *,
    warm: bool = True,
    accelerate: bool = True,
) -> RunResult:
    """Execute ``program`` from reset under ``schedule``.

    ``warm`` starts with the instruction cache left behind by one previous
    fault-free execution. ``accelerate=False`` forces plain stepping.
    """
    if budget is None:
        budget = program.default_budget
    state = program.initial_state(warm)
    return run_state(state, schedule, budget, program if accelerate else None)
