"""The three characterization tests, emitted as encoded RV32I programs.

Every program starts with the same prologue: the sentinel is built in t2
and copied into every register the test does not use, then the counters
are initialized. The loop tests branch back while ``0 < t1`` (signed).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

from .faults import SENTINEL
from .isa import MASK32, SP, T0, T1, T2, ZERO, addi, blt, decode, disassemble, load_immediate, lw, sw, to_signed
from .machine import FLASH_BASE, RAM_BASE, RAM_SIZE, ICache, MachineState, step

COUNTER_T0_OFFSET = -4
COUNTER_T1_OFFSET = -8


class TestId(enum.Enum):
    REGISTER_LOOP = 1
    MEMORY_LOOP = 2
    UNROLLED_LOOP = 3

    @property
    def label(self) -> str:
        return {1: "RegisterLoop", 2: "MemoryLoop", 3: "UnrolledLoop"}[self.value]

    @classmethod
    def parse(cls, value) -> "TestId":
        if isinstance(value, TestId):
            return value
        if isinstance(value, int) or (isinstance(value, str) and value.isdigit()):
            return cls(int(value))
        for t in cls:
            if value in (t.label, t.name, t.name.lower()):
                return t
        raise ValueError(f"unknown test: {value!r}")

    __test__ = False  # not a pytest class


class Role(enum.Enum):
    INIT = "init"
    ADD = "add"
    SUB = "sub"
    BRANCH = "branch"
    LOAD = "load"
    STORE = "store"


def _sentinel_prologue(unused: list[int]) -> list[int]:
    words = load_immediate(T2, SENTINEL)
    words += [addi(r, T2, 0) for r in unused if r != T2]
    return words


@dataclass(eq=False)
class TestProgram:
    """An encoded test plus its expected-result predicate and golden metrics."""

    id: TestId
    n: int
    text: tuple[int, ...]
    roles: tuple[Role, ...]
    loop_start: int  # index of the first body instruction
    unused_registers: tuple[int, ...]
    entry: int = FLASH_BASE
    sentinel: int = SENTINEL
    _icache_geometry: tuple[int, int] = field(default=(16384, 32), repr=False)

    __test__ = False

    @property
    def size_bytes(self) -> int:
        return 4 * len(self.text)

    @property
    def prologue_length(self) -> int:
        return self.loop_start

    @property
    def loop_head(self) -> int:
        return self.entry + 4 * self.loop_start

    @property
    def body_length(self) -> int:
        return len(self.text) - self.loop_start

    def expected(self, state: MachineState) -> bool:
        regs = state.regs
        if regs[T0] != self.n:
            return False
        if self.id is not TestId.UNROLLED_LOOP and regs[T1] != 0:
            return False
        return all(regs[r] == self.sentinel for r in self.unused_registers)

    def corrupted_registers(self, state: MachineState) -> list[tuple[int, int]]:
        return [(r, state.regs[r]) for r in self.unused_registers if state.regs[r] != self.sentinel]

    def new_icache(self) -> ICache:
        return ICache(*self._icache_geometry)

    def initial_state(self, warm: bool = True) -> MachineState:
        cache = self.warm_icache if warm else self.new_icache()
        state = MachineState.boot(self.text, cache)
        state.pc = self.entry
        state.text_base = self.entry
        return state

    # golden runs

    def _golden_pass(self, state: MachineState, visits: list[list[int]] | None = None) -> MachineState:
        limit = 64 * len(self.text) + 16 * self.n + 1024
        while not state.halted:
            if visits is not None:
                visits[(state.pc - self.entry) >> 2].append(state.cycle)
            step(state)
            if state.cycle > limit:
                raise RuntimeError("golden run did not terminate")
        return state

    @cached_property
    def warm_icache(self) -> ICache:
        state = MachineState.boot(self.text, self.new_icache())
        state.pc = state.text_base = self.entry
        return self._golden_pass(state).icache.copy()

    @cached_property
    def _golden(self) -> tuple[MachineState, list[list[int]]]:
        visits: list[list[int]] = [[] for _ in self.text]
        state = self._golden_pass(self.initial_state(warm=True), visits)
        return state, visits

    @property
    def golden_state(self) -> MachineState:
        return self._golden[0]

    @property
    def golden_cycles(self) -> int:
        return self._golden[0].cycle

    @property
    def default_budget(self) -> int:
        return 10 * self.golden_cycles

    def occurrence_cycles(self, index: int) -> list[int]:
        """Start cycles of every golden execution of instruction ``index``."""
        return self._golden[1][index]

    def occurrences(self, index: int) -> int:
        return len(self._golden[1][index])

    # fast-forward over fault-free iterations

    def _lines_cached(self, state: MachineState, first: int, last: int) -> bool:
        cache = state.icache
        addr = first & ~(cache.line_size - 1)
        while addr <= last:
            if not cache.contains(addr):
                return False
            addr += cache.line_size
        return True

    def fast_forward(self, state: MachineState, limit_cycle: float) -> bool:
        """Retire whole fault-free iterations without stepping them.

        Only iterations that finish by ``limit_cycle`` are taken, and the
        final (exiting) iteration is always left to the stepper. Returns
        False when the state is not at a point the summary covers.
        """
        if self.id is TestId.UNROLLED_LOOP:
            return self._ff_unrolled(state, limit_cycle)
        if state.pc != self.loop_head:
            return False
        if not self._lines_cached(state, self.loop_head, self.entry + self.size_bytes - 4):
            return False
        regs = state.regs
        if self.id is TestId.REGISTER_LOOP:
            remaining = to_signed(regs[T1])
        else:
            sp = regs[SP]
            a0 = (sp + COUNTER_T0_OFFSET) & MASK32
            a1 = (sp + COUNTER_T1_OFFSET) & MASK32
            if a0 & 3 or a1 & 3 or not (0 <= a0 - RAM_BASE < RAM_SIZE and 0 <= a1 - RAM_BASE < RAM_SIZE):
                return False
            remaining = to_signed(state.load_word(a1))
        per_iter = self.body_length
        m = remaining - 1
        if limit_cycle != math.inf:
            m = min(m, int((limit_cycle - state.cycle) // per_iter))
        if m <= 0:
            return False
        if self.id is TestId.REGISTER_LOOP:
            regs[T0] = (regs[T0] + m) & MASK32
            regs[T1] = (regs[T1] - m) & MASK32
        else:
            t0 = (state.load_word(a0) + m) & MASK32
            t1 = (state.load_word(a1) - m) & MASK32
            state.store_word(a0, t0)
            state.store_word(a1, t1)
            regs[T0], regs[T1] = t0, t1
        state.cycle += per_iter * m
        return True

    def _ff_unrolled(self, state: MachineState, limit_cycle: float) -> bool:
        idx = (state.pc - self.entry) >> 2
        if state.pc & 3 or idx < self.loop_start or idx >= len(self.text) - 1:
            return False
        cache = state.icache
        shift, n_lines, tags = cache.line_shift, cache.n_lines, cache.tags
        addr = state.pc
        end = self.entry + 4 * (len(self.text) - 1)  # leave the last add to the stepper
        cycle = state.cycle
        misses = 0
        while addr < end:
            line = addr >> shift
            line_end = min((line + 1) << shift, end)
            k = (line_end - addr) >> 2
            miss = tags[line % n_lines] != line
            if cycle + k + miss > limit_cycle:
                k = int(limit_cycle - cycle - miss)
                if k <= 0:
                    break
            if miss:
                tags[line % n_lines] = line
                misses += 1
            cycle += k + miss
            addr += 4 * k
            if addr < line_end:
                break
        advanced = (addr - state.pc) >> 2
        if advanced == 0:
            return False
        state.regs[T0] = (state.regs[T0] + advanced) & MASK32
        state.pc = addr
        state.cycle = cycle
        state.flash_fetch_count += misses
        return True

    def disassembly(self) -> str:
        lines = [f"# {self.id.label} n={self.n}: {len(self.text)} instructions, {self.size_bytes} bytes"]
        for i, word in enumerate(self.text):
            addr = self.entry + 4 * i
            label = "  <loop>" if i == self.loop_start and self.id is not TestId.UNROLLED_LOOP else ""
            lines.append(f"{addr:08x}: {word:08x}  {disassemble(decode(word), addr):28s} ; {self.roles[i].value}{label}")
        return "\n".join(lines)


def _unused(*used: int) -> tuple[int, ...]:
    return tuple(r for r in range(1, 32) if r not in used)


@lru_cache(maxsize=64)
def build_register_loop(n: int) -> TestProgram:
    if n < 1:
        raise ValueError("n must be >= 1")
    unused = _unused(SP, T0, T1)
    text = _sentinel_prologue(list(unused))
    text += [addi(T0, ZERO, 0)]
    text += load_immediate(T1, n)
    roles = [Role.INIT] * len(text)
    start = len(text)
    text += [addi(T0, T0, 1), addi(T1, T1, -1), blt(ZERO, T1, -8)]
    roles += [Role.ADD, Role.SUB, Role.BRANCH]
    return TestProgram(TestId.REGISTER_LOOP, n, tuple(text), tuple(roles), start, unused)


@lru_cache(maxsize=64)
def build_memory_loop(n: int) -> TestProgram:
    if n < 1:
        raise ValueError("n must be >= 1")
    unused = _unused(SP, T0, T1)
    text = _sentinel_prologue(list(unused))
    text += [addi(T0, ZERO, 0), sw(T0, COUNTER_T0_OFFSET, SP)]
    text += load_immediate(T1, n)
    text += [sw(T1, COUNTER_T1_OFFSET, SP)]
    roles = [Role.INIT] * len(text)
    start = len(text)
    text += [
        lw(T0, COUNTER_T0_OFFSET, SP),
        lw(T1, COUNTER_T1_OFFSET, SP),
        addi(T0, T0, 1),
        addi(T1, T1, -1),
        sw(T0, COUNTER_T0_OFFSET, SP),
        sw(T1, COUNTER_T1_OFFSET, SP),
        blt(ZERO, T1, -24),
    ]
    roles += [Role.LOAD, Role.LOAD, Role.ADD, Role.SUB, Role.STORE, Role.STORE, Role.BRANCH]
    return TestProgram(TestId.MEMORY_LOOP, n, tuple(text), tuple(roles), start, unused)


@lru_cache(maxsize=64)
def build_unrolled_loop(n: int) -> TestProgram:
    if n < 1:
        raise ValueError("n must be >= 1")
    unused = _unused(SP, T0)
    text = _sentinel_prologue(list(unused))
    text += [addi(T0, ZERO, 0)]
    roles = [Role.INIT] * len(text)
    start = len(text)
    text += [addi(T0, T0, 1)] * n
    roles += [Role.ADD] * n
    return TestProgram(TestId.UNROLLED_LOOP, n, tuple(text), tuple(roles), start, unused)


BUILDERS = {
    TestId.REGISTER_LOOP: build_register_loop,
    TestId.MEMORY_LOOP: build_memory_loop,
    TestId.UNROLLED_LOOP: build_unrolled_loop,
}


def build(test, n: int) -> TestProgram:
    return BUILDERS[TestId.parse(test)](n)
