"""Fault attribution: explain an observed faulty result by verified fault hypotheses.

Every explanation carries a witness schedule, and it is reported only after
re-simulating that witness reproduces the observation exactly. Hypotheses
come from two sources:

* closed-form generators for multi-event composites (runs of skipped adds
  or subs, immediate manipulations combined by subset sums, manipulations
  followed by a skipped loop branch, sentinel values written into a counter);
* a family table of single-event hypotheses. Each family is one site plus
  one effect, indexed by iteration (or by position in the unrolled test).
  Its observable is modeled piecewise-affine in the index: segments are found
  by bisection and checked at interior points, so a lookup solves for the
  iteration instead of enumerating it.
"""

from __future__ import annotations

import enum
import itertools
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache

from .faults import EMPTY_SCHEDULE, SENTINEL, Effect, EffectKind, FaultEvent, FaultSchedule, Surface
from .isa import MASK32, SP, T0, T1, Kind, decode, disassemble, sext, to_signed
from .machine import MachineState, Termination, run, run_state, step
from .testprogs import Role, TestId, TestProgram, build

OBS_REGS = tuple(r for r in range(1, 32) if r != SP)
_POS = {r: i for i, r in enumerate(OBS_REGS)}
SKIP_RUN_LIMIT = 64
MAX_COMPOSITE_EVENTS = 3
MAX_MASK_BITS = 4


class LabelKind(enum.Enum):
    SKIP_ADD = "SkipAdd"
    SKIP_SUB = "SkipSub"
    SKIP_BRANCH = "SkipBranch"
    SKIP_LOAD = "SkipLoad"
    SKIP_STORE = "SkipStore"
    MANIPULATE_ADD = "ManipulateAdd"
    MANIPULATE_SUB = "ManipulateSub"
    MANIPULATE_BRANCH = "ManipulateBranch"
    MEMORY_CORRUPTION = "MemoryCorruption"
    REGISTER_CORRUPTION = "RegisterCorruption"
    UNEXPLAINED = "UnexplainedOutcome"


_SKIP_KIND = {
    Role.ADD: LabelKind.SKIP_ADD,
    Role.SUB: LabelKind.SKIP_SUB,
    Role.BRANCH: LabelKind.SKIP_BRANCH,
    Role.LOAD: LabelKind.SKIP_LOAD,
    Role.STORE: LabelKind.SKIP_STORE,
}
_MANIPULATE_KIND = {
    Role.ADD: LabelKind.MANIPULATE_ADD,
    Role.SUB: LabelKind.MANIPULATE_SUB,
    Role.BRANCH: LabelKind.MANIPULATE_BRANCH,
    Role.LOAD: LabelKind.MEMORY_CORRUPTION,
    Role.STORE: LabelKind.MEMORY_CORRUPTION,
}


@dataclass(frozen=True)
class AttributionLabel:
    kind: LabelKind
    iteration: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        parts = [self.kind.value]
        if self.iteration is not None:
            parts.append(f"@{self.iteration}")
        if self.detail:
            parts.append(f"[{self.detail}]")
        return "".join(parts)


@dataclass(frozen=True)
class Explanation:
    labels: tuple[AttributionLabel, ...]
    witness: FaultSchedule
    source: str = ""

    @property
    def event_count(self) -> int:
        return len(self.witness)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(sorted({l.kind.value for l in self.labels}))

    @property
    def unexplained(self) -> bool:
        return any(l.kind is LabelKind.UNEXPLAINED for l in self.labels)

    def __str__(self) -> str:
        return " + ".join(str(l) for l in self.labels)


UNEXPLAINED = Explanation((AttributionLabel(LabelKind.UNEXPLAINED),), EMPTY_SCHEDULE, "none")


@dataclass(frozen=True)
class Observation:
    """Final register values that the attack box can read back."""

    test: TestId
    n: int
    regs: tuple[int, ...]  # values of OBS_REGS

    @classmethod
    def from_state(cls, program: TestProgram, state: MachineState) -> "Observation":
        return cls(program.id, program.n, tuple(state.regs[r] for r in OBS_REGS))

    @classmethod
    def from_values(cls, test, n: int, t0: int, t1: int | None = None, corrupted=()) -> "Observation":
        test = TestId.parse(test)
        regs = [SENTINEL] * 32
        regs[T0] = t0 & MASK32
        if t1 is not None:
            regs[T1] = t1 & MASK32
        for r, v in corrupted:
            regs[int(r)] = int(v) & MASK32
        return cls(test, n, tuple(regs[r] for r in OBS_REGS))

    @classmethod
    def from_record(cls, record) -> "Observation":
        if record.t0 is None:
            raise ValueError("record has no register observation")
        return cls.from_values(record.test_id, record.n, record.t0, record.t1, record.corrupted_registers)

    def reg(self, r: int) -> int:
        return self.regs[_POS[r]]

    @property
    def t0(self) -> int:
        return self.reg(T0)

    @property
    def t1(self) -> int:
        return self.reg(T1)

    def counters_only(self, program: TestProgram) -> "Observation":
        """The same observation with every unused register restored to the sentinel."""
        regs = list(self.regs)
        for r in program.unused_registers:
            regs[_POS[r]] = program.sentinel
        return Observation(self.test, self.n, tuple(regs))

    def corrupted(self, program: TestProgram) -> list[tuple[int, int]]:
        return [(r, self.reg(r)) for r in program.unused_registers if self.reg(r) != program.sentinel]


# labels


def _describe_flip(word: int, mask: int) -> str:
    return f"{disassemble(decode(word))} -> {disassemble(decode(word ^ mask))}"


def kind_for(program: TestProgram, index: int, surface: Surface, effect: Effect) -> LabelKind:
    role = program.roles[index]
    if surface is Surface.REGISTER_FILE:
        return LabelKind.REGISTER_CORRUPTION
    if surface in (Surface.DCACHE_LOAD, Surface.DCACHE_STORE):
        return LabelKind.MEMORY_CORRUPTION
    if role is Role.INIT:
        is_store = decode(program.text[index]).kind is Kind.SW
        return LabelKind.MEMORY_CORRUPTION if is_store else LabelKind.REGISTER_CORRUPTION
    return (_SKIP_KIND if effect.kind is EffectKind.SKIP else _MANIPULATE_KIND)[role]


def label_for(
    program: TestProgram, index: int, iteration: int, surface: Surface, effect: Effect, target: int | None = None
) -> AttributionLabel:
    """Map one fault event on a known instruction to the attribution vocabulary."""
    kind = kind_for(program, index, surface, effect)
    role = program.roles[index]
    word = program.text[index]
    it = iteration if role is not Role.INIT else None
    if surface is Surface.REGISTER_FILE:
        return AttributionLabel(kind, it, f"x{target} {effect}")
    if surface in (Surface.DCACHE_LOAD, Surface.DCACHE_STORE):
        return AttributionLabel(kind, it, f"{surface.value} {effect}")
    if role is Role.INIT:
        detail = "skip " + disassemble(decode(word)) if effect.kind is EffectKind.SKIP else _describe_flip(word, effect.value)
        return AttributionLabel(kind, None, detail)
    if effect.kind is EffectKind.SKIP:
        return AttributionLabel(kind, it)
    return AttributionLabel(kind, it, _describe_flip(word, effect.value))


def consistent_kinds(program: TestProgram, index: int, surface: Surface) -> frozenset[LabelKind]:
    """Label kinds that correctly name a ground-truth event on instruction ``index``."""
    if surface is Surface.REGISTER_FILE:
        return frozenset({LabelKind.REGISTER_CORRUPTION})
    if surface in (Surface.DCACHE_LOAD, Surface.DCACHE_STORE):
        return frozenset({LabelKind.MEMORY_CORRUPTION})
    role = program.roles[index]
    if role is Role.INIT:
        return frozenset({LabelKind.REGISTER_CORRUPTION, LabelKind.MEMORY_CORRUPTION})
    return frozenset({_SKIP_KIND[role], _MANIPULATE_KIND[role]})


# hypothesis steps and witnesses


@dataclass(frozen=True)
class Step:
    """One event addressed by instruction index and golden occurrence (1-based)."""

    index: int
    occurrence: int
    surface: Surface
    effect: Effect
    target: int | None = None

    def event(self, program: TestProgram) -> FaultEvent | None:
        occ = program.occurrence_cycles(self.index)
        if not 1 <= self.occurrence <= len(occ):
            return None
        return FaultEvent(occ[self.occurrence - 1], self.surface, self.effect, self.target)

    def iteration(self, program: TestProgram) -> int:
        if program.id is TestId.UNROLLED_LOOP and self.index >= program.loop_start:
            return self.index - program.loop_start + 1
        return self.occurrence

    def label(self, program: TestProgram) -> AttributionLabel:
        return label_for(program, self.index, self.iteration(program), self.surface, self.effect, self.target)


def _site(program: TestProgram, role: Role, which: int = 0) -> int:
    found = [i for i in range(program.loop_start, len(program.text)) if program.roles[i] is role]
    return found[which]


def _at(program: TestProgram, role: Role, k: int, which: int = 0) -> tuple[int, int]:
    """(instruction index, occurrence) of the ``k``-th dynamic execution of a body role."""
    if program.id is TestId.UNROLLED_LOOP:
        return program.loop_start + k - 1, 1
    return _site(program, role, which), k


def _step(program, role, k, effect, surface=Surface.EXECUTE, target=None, which=0) -> Step:
    index, occ = _at(program, role, k, which)
    return Step(index, occ, surface, effect, target)


def _schedule(program: TestProgram, steps) -> FaultSchedule | None:
    events = []
    for s in steps:
        ev = s.event(program)
        if ev is None:
            return None
        events.append(ev)
    try:
        return FaultSchedule(tuple(events))
    except ValueError:
        return None


@lru_cache(maxsize=16)
def _loop_snapshot(program: TestProgram) -> MachineState:
    """Golden state at the first body instruction (prologue retired)."""
    state = program.initial_state(warm=True)
    while state.pc != program.loop_head:
        step(state)
    return state


def simulate(program: TestProgram, schedule: FaultSchedule, *, exact: bool = False) -> Observation | None:
    """Observation produced by ``schedule``, or None when the run does not complete."""
    if exact:
        result = run(program, schedule, accelerate=False)
    else:
        snap = _loop_snapshot(program)
        if schedule.events and schedule.events[0].cycle >= snap.cycle:
            result = run_state(snap.copy(), schedule, program.default_budget, program)
        else:
            result = run(program, schedule)
    if result.termination is not Termination.COMPLETED:
        return None
    return Observation.from_state(program, result.final_state)


def verify(explanation: Explanation, observation: Observation, *, exact: bool = False) -> bool:
    """Re-simulate the witness; True when it reproduces ``observation`` exactly."""
    if explanation.unexplained or not explanation.witness.events:
        return False
    program = build(observation.test, observation.n)
    return simulate(program, explanation.witness, exact=exact) == observation


# effect enumeration


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _register_field_masks(word: int) -> list[int]:
    """Multi-bit flips that retarget a used register field to another register."""
    ins = decode(word)
    fields = []
    if ins.kind in (Kind.ADDI, Kind.LW, Kind.LUI, Kind.ADD, Kind.SUB, Kind.JAL):
        fields.append((7, ins.rd))
    if ins.kind in (Kind.ADDI, Kind.LW, Kind.SW, Kind.BLT, Kind.BGE, Kind.BNE, Kind.ADD, Kind.SUB):
        fields.append((15, ins.rs1))
    if ins.kind in (Kind.SW, Kind.BLT, Kind.BGE, Kind.BNE, Kind.ADD, Kind.SUB):
        fields.append((20, ins.rs2))
    masks = []
    for shift, cur in fields:
        for r in range(32):
            m = (cur ^ r) << shift
            if 1 < _popcount(m) <= MAX_MASK_BITS:
                masks.append(m)
    return masks


def site_effects(program: TestProgram, index: int) -> list[tuple[Surface, Effect, int | None]]:
    word = program.text[index]
    out: list[tuple[Surface, Effect, int | None]] = [(Surface.EXECUTE, Effect.skip(), None)]
    out += [(Surface.EXECUTE, Effect.flip(1 << b), None) for b in range(32)]
    out += [(Surface.EXECUTE, Effect.flip(m), None) for m in _register_field_masks(word)]
    kind = decode(word).kind
    if kind is Kind.LW:
        out.append((Surface.DCACHE_LOAD, Effect.replace(program.sentinel), None))
    elif kind is Kind.SW:
        out.append((Surface.DCACHE_STORE, Effect.replace(program.sentinel), None))
    if program.roles[index] is not Role.INIT:
        for r in (T0, T1):
            out.append((Surface.REGISTER_FILE, Effect.replace(program.sentinel), r))
    return out


@lru_cache(maxsize=8)
def imm_deltas(base_imm: int) -> dict[int, int]:
    """Value change of an I-type immediate -> fewest-bit word mask producing it."""
    out: dict[int, int] = {}
    for bits in range(1, MAX_MASK_BITS + 1):
        for combo in itertools.combinations(range(12), bits):
            m = sum(1 << b for b in combo)
            delta = sext((base_imm & 0xFFF) ^ m, 12) - base_imm
            out.setdefault(delta, m << 20)
    return out


@lru_cache(maxsize=8)
def _pair_sums(base_imm: int) -> dict[int, tuple[int, int]]:
    deltas = sorted(imm_deltas(base_imm), key=lambda d: (_popcount(imm_deltas(base_imm)[d]), abs(d)))
    out: dict[int, tuple[int, int]] = {}
    for a in deltas:
        for b in deltas:
            out.setdefault(a + b, (a, b))
    return out


def _delta_combos(base_imm: int, target: int, max_terms: int) -> list[tuple[int, ...]]:
    """Ways of writing ``target`` as a sum of up to ``max_terms`` immediate deltas (one each)."""
    d1 = imm_deltas(base_imm)
    found: list[tuple[int, ...]] = []
    if target in d1:
        found.append((target,))
    if max_terms >= 2:
        pairs = _pair_sums(base_imm)
        if target in pairs:
            found.append(pairs[target])
        elif max_terms >= 3:
            for a in sorted(d1, key=lambda d: _popcount(d1[d])):
                if target - a in pairs:
                    found.append((a, *pairs[target - a]))
                    break
    return found


# family table


@dataclass(frozen=True)
class Family:
    """One site plus one effect, indexed by iteration k in 1..size."""

    role_site: tuple[int, bool]  # (instruction index, indexed by unrolled position)
    surface: Surface
    effect: Effect
    target: int | None
    exit_skip: bool
    size: int

    def steps(self, program: TestProgram, k: int) -> list[Step]:
        index, by_position = self.role_site
        if by_position:
            base = Step(program.loop_start + k - 1, 1, self.surface, self.effect, self.target)
        else:
            base = Step(index, k if index >= program.loop_start else 1, self.surface, self.effect, self.target)
        if not self.exit_skip:
            return [base]
        return [base, Step(len(program.text) - 1, k, Surface.EXECUTE, Effect.skip())]


@dataclass(frozen=True)
class Segment:
    family: Family
    lo: int
    hi: int
    base: tuple[int, ...]
    slope: tuple[int, ...]  # signed per-register slope


class FamilyTable:
    """Single-event (and event-plus-exit-skip) hypotheses, modeled per segment."""

    MIN_SEGMENT = 5

    def __init__(self, program: TestProgram):
        self.program = program
        self.evaluations = 0
        self.exact: dict[tuple[int, ...], list[tuple[Family, int]]] = defaultdict(list)
        # slope pattern -> static key -> segments
        self.affine: dict[tuple[int, ...], dict[tuple, list[Segment]]] = defaultdict(lambda: defaultdict(list))
        for fam in self._families():
            self._index(fam)

    def _families(self):
        p = self.program
        for i in range(p.loop_start):
            for surface, effect, target in site_effects(p, i):
                yield Family((i, False), surface, effect, target, False, 1)
        if p.id is TestId.UNROLLED_LOOP:
            i = p.loop_start
            for surface, effect, target in site_effects(p, i):
                yield Family((i, True), surface, effect, target, False, p.n)
            return
        branch = len(p.text) - 1
        for i in range(p.loop_start, len(p.text)):
            for surface, effect, target in site_effects(p, i):
                yield Family((i, False), surface, effect, target, False, p.n)
                if i != branch:
                    yield Family((i, False), surface, effect, target, True, p.n)

    def _eval(self, fam: Family, k: int, memo: dict) -> tuple[int, ...] | None:
        if k not in memo:
            self.evaluations += 1
            sched = _schedule(self.program, fam.steps(self.program, k))
            obs = simulate(self.program, sched) if sched is not None else None
            memo[k] = None if obs is None else obs.regs
        return memo[k]

    def _index(self, fam: Family) -> None:
        memo: dict[int, tuple[int, ...] | None] = {}
        stack = [(1, fam.size)]
        while stack:
            lo, hi = stack.pop()
            if hi - lo + 1 < self.MIN_SEGMENT:
                for k in range(lo, hi + 1):
                    v = self._eval(fam, k, memo)
                    if v is not None:
                        self.exact[v].append((fam, k))
                continue
            probes = sorted({lo, lo + 1, (3 * lo + hi) // 4, (lo + hi) // 2, (lo + 3 * hi) // 4, hi})
            values = [self._eval(fam, k, memo) for k in probes]
            if all(v is None for v in values):
                continue  # every probe crashed: the segment contributes nothing
            if all(v is not None for v in values):
                a, b = values[0], values[1]
                slope = tuple(to_signed((y - x) & MASK32) for x, y in zip(a, b))
                if all(
                    v == tuple((x + s * (k - lo)) & MASK32 for x, s in zip(a, slope))
                    for k, v in zip(probes, values)
                ):
                    pattern = tuple(i for i, s in enumerate(slope) if s)
                    key = tuple(x for i, x in enumerate(a) if not slope[i])
                    self.affine[pattern][key].append(Segment(fam, lo, hi, a, slope))
                    continue
            mid = (lo + hi) // 2
            stack.append((mid + 1, hi))
            stack.append((lo, mid))

    def lookup(self, obs: Observation) -> list[tuple[Family, int]]:
        regs = obs.regs
        hits = list(self.exact.get(regs, ()))
        for pattern, groups in self.affine.items():
            key = tuple(x for i, x in enumerate(regs) if i not in pattern)
            for seg in groups.get(key, ()):
                k = self._solve(seg, regs, pattern)
                if k is not None:
                    hits.append((seg.family, k))
        return hits

    @staticmethod
    def _solve(seg: Segment, regs: tuple[int, ...], pattern: tuple[int, ...]) -> int | None:
        if not pattern:
            return seg.lo
        i = pattern[0]
        d = to_signed((regs[i] - seg.base[i]) & MASK32)
        s = seg.slope[i]
        if d % s:
            return None
        t = d // s
        if not 0 <= t <= seg.hi - seg.lo:
            return None
        if all(((seg.base[j] + seg.slope[j] * t) & MASK32) == regs[j] for j in pattern[1:]):
            return seg.lo + t
        return None


_TABLES: dict[tuple[TestId, int], FamilyTable] = {}


def family_table(program: TestProgram) -> FamilyTable:
    key = (program.id, program.n)
    if key not in _TABLES:
        _TABLES[key] = FamilyTable(program)
    return _TABLES[key]


# closed-form generators (each yields step lists explaining t0/t1 only)


def _add_imm(program: TestProgram) -> int:
    return decode(program.text[_at(program, Role.ADD, 1)[0]]).imm


def _sub_imm(program: TestProgram) -> int:
    return decode(program.text[_site(program, Role.SUB)]).imm


def _gen_skip_runs(p: TestProgram, t0: int, t1: int):
    loop = p.id is not TestId.UNROLLED_LOOP
    if loop and t1 != 0:
        return
    delta = to_signed((t0 - p.n) & MASK32)
    if -SKIP_RUN_LIMIT <= delta < 0 and -delta <= p.n:
        yield [_step(p, Role.ADD, k, Effect.skip()) for k in range(1, -delta + 1)]
    if loop and 0 < delta <= SKIP_RUN_LIMIT:
        yield [_step(p, Role.SUB, k, Effect.skip()) for k in range(1, delta + 1)]


def _gen_add_manipulations(p: TestProgram, t0: int, t1: int):
    """t0 off by a sum of immediate changes of the add, plus up to two skipped adds."""
    loop = p.id is not TestId.UNROLLED_LOOP
    if loop and t1 != 0:
        return
    delta = to_signed((t0 - p.n) & MASK32)
    if delta == 0:
        return
    base = _add_imm(p)
    masks = imm_deltas(base)
    for skips in range(0, 3):
        room = MAX_COMPOSITE_EVENTS - skips
        for combo in _delta_combos(base, delta + skips, room):
            if len(combo) + skips > p.n:
                continue
            steps = [_step(p, Role.ADD, j + 1, Effect.flip(masks[d])) for j, d in enumerate(combo)]
            steps += [_step(p, Role.ADD, len(combo) + j + 1, Effect.skip()) for j in range(skips)]
            yield steps


def _gen_exit_skips(p: TestProgram, t0: int, t1: int):
    """The loop left early through a skipped branch at iteration k, maybe after a counter fault."""
    if p.id is TestId.UNROLLED_LOOP:
        return
    n = p.n
    st0, st1 = to_signed(t0), to_signed(t1)
    branch = lambda k: _step(p, Role.BRANCH, k, Effect.skip())  # noqa: E731
    if st0 + st1 == n and 1 <= st0 < n:
        yield [branch(st0)]
    k = st0
    s = st1 - (n - k)
    if 1 <= s <= 2 and s < k <= n:
        yield [_step(p, Role.SUB, j, Effect.skip()) for j in range(1, s + 1)] + [branch(k)]
    k = n - st1
    s = k - st0
    if 1 <= s <= 2 and s < k <= n:
        yield [_step(p, Role.ADD, j, Effect.skip()) for j in range(1, s + 1)] + [branch(k)]
    # one manipulated add or sub in the exit iteration
    add_masks = imm_deltas(_add_imm(p))
    k = n - st1
    if 1 <= k <= n and (st0 - k) in add_masks:
        yield [_step(p, Role.ADD, k, Effect.flip(add_masks[st0 - k])), branch(k)]
    sub_base = _sub_imm(p)
    sub_masks = imm_deltas(sub_base)
    k = st0
    e = st1 - (n - k)
    if 1 <= k <= n and e in sub_masks:
        manip = _step(p, Role.SUB, k, Effect.flip(sub_masks[e]))
        if n - k + e <= 0:
            yield [manip]  # the loop exits on its own
        yield [manip, branch(k)]


def _gen_sentinel(p: TestProgram, t0: int, t1: int):
    """A counter overwritten with the sentinel (register file or data path)."""
    S = p.sentinel
    n = p.n
    r0 = to_signed((t0 - S) & MASK32)
    loop = p.id is not TestId.UNROLLED_LOOP
    rf = lambda role, k, reg: _step(p, role, k, Effect.replace(S), Surface.REGISTER_FILE, reg)  # noqa: E731
    if abs(r0) < 1 << 20 and (not loop or t1 == 0):
        k = n + 1 - r0
        if 1 <= k <= n:
            yield [rf(Role.ADD, k, T0)]
            if p.id is TestId.MEMORY_LOOP:
                yield [_step(p, Role.LOAD, k, Effect.replace(S), Surface.DCACHE_LOAD, which=0)]
                if k >= 2:
                    yield [_step(p, Role.STORE, k - 1, Effect.replace(S), Surface.DCACHE_STORE, which=0)]
    if not loop:
        return
    r1 = to_signed((t1 - (S - 1)) & MASK32)
    k = to_signed(t0)
    if abs(r1) >= 1 << 20 or not 1 <= k <= n:
        return
    firsts = [[rf(Role.SUB, k, T1)]]
    if p.id is TestId.MEMORY_LOOP:
        firsts.append([_step(p, Role.LOAD, k, Effect.replace(S), Surface.DCACHE_LOAD, which=1)])
    sub_masks = imm_deltas(_sub_imm(p))
    for first in firsts:
        tails = [[]] if r1 == 0 else ([[_step(p, Role.SUB, k, Effect.flip(sub_masks[r1]))]] if r1 in sub_masks else [])
        for tail in tails:
            yield first + tail
            yield first + tail + [_step(p, Role.BRANCH, k, Effect.skip())]
    if p.id is TestId.MEMORY_LOOP and r1 == 0 and k >= 2:
        yield [_step(p, Role.STORE, k - 1, Effect.replace(S), Surface.DCACHE_STORE, which=1)]


def _gen_catch_all(p: TestProgram, t0: int, t1: int):
    """A counter replaced by an arbitrary value in the last iteration that can produce it."""
    n = p.n
    loop = p.id is not TestId.UNROLLED_LOOP
    if not loop or t1 == 0:
        value = (t0 - 1) & MASK32
        if p.id is TestId.MEMORY_LOOP:
            yield [_step(p, Role.LOAD, n, Effect.replace(value), Surface.DCACHE_LOAD, which=0)]
        else:
            yield [_step(p, Role.ADD, n, Effect.replace(value), Surface.REGISTER_FILE, T0)]
    if loop and to_signed(t1) < 0 and 1 <= to_signed(t0) <= n:
        value = (t1 + 1) & MASK32
        k = to_signed(t0)
        if p.id is TestId.MEMORY_LOOP:
            yield [_step(p, Role.LOAD, k, Effect.replace(value), Surface.DCACHE_LOAD, which=1)]
        else:
            yield [_step(p, Role.SUB, k, Effect.replace(value), Surface.REGISTER_FILE, T1)]


CLOSED_FORM = (
    ("skip-run", _gen_skip_runs),
    ("add-immediate", _gen_add_manipulations),
    ("early-exit", _gen_exit_skips),
    ("sentinel", _gen_sentinel),
)


def _register_fixups(p: TestProgram, corrupted: list[tuple[int, int]]) -> list[Step]:
    """Events that leave unused registers with the observed values, placed at loop entry."""
    steps = []
    index = p.loop_start
    for r, v in corrupted:
        diff = v ^ p.sentinel
        effect = Effect.flip(diff) if _popcount(diff) <= MAX_MASK_BITS else Effect.replace(v)
        steps.append(Step(index, 1, Surface.REGISTER_FILE, effect, r))
    return steps


# attribution


def _candidates(program: TestProgram, obs: Observation):
    """(priority, source, steps) in rough parsimony order; unverified."""
    table = family_table(program)
    for fam, k in table.lookup(obs):
        yield 1, "family", fam.steps(program, k)
    counters = obs.counters_only(program)
    corrupted = obs.corrupted(program)
    fixups = _register_fixups(program, corrupted)
    if corrupted:
        for fam, k in table.lookup(counters):
            yield 2, "family+registers", fam.steps(program, k) + fixups
    for name, gen in CLOSED_FORM:
        for steps in gen(program, obs.t0, obs.t1):
            yield 0, name, steps + fixups
    if corrupted and obs.t0 == program.n and (program.id is TestId.UNROLLED_LOOP or obs.t1 == 0):
        yield 3, "registers", fixups


def _catch_all_candidates(program: TestProgram, obs: Observation):
    fixups = _register_fixups(program, obs.corrupted(program))
    for steps in _gen_catch_all(program, obs.t0, obs.t1):
        yield 4, "catch-all", steps + fixups


def _explain(program: TestProgram, obs: Observation, candidates, exact: bool) -> list[tuple]:
    found: dict[tuple[str, ...], tuple] = {}
    tried: dict = {}
    for priority, source, steps in candidates:
        key = tuple(sorted({kind_for(program, s.index, s.surface, s.effect).value for s in steps}))
        rank = (len(steps), priority)
        if key in found and found[key][0] <= rank:
            continue
        sched = _schedule(program, steps)
        if sched is None or (sched.events in tried and tried[sched.events] <= rank):
            continue
        tried[sched.events] = rank
        expl = Explanation(tuple(s.label(program) for s in steps), sched, source)
        if simulate(program, sched, exact=exact) == obs:
            found[key] = (rank, expl)
    return sorted(found.values(), key=lambda item: (item[0], item[1].kinds))


def attribute(observation, *, exact: bool = False) -> list[Explanation]:
    """Verified explanations of a Successful observation, fewest events first.

    Accepts an Observation or a campaign record. Returns a single
    UnexplainedOutcome entry when no hypothesis reproduces the result.
    """
    obs = observation if isinstance(observation, Observation) else Observation.from_record(observation)
    program = build(obs.test, obs.n)
    ranked = _explain(program, obs, _candidates(program, obs), exact)
    if not ranked:
        ranked = _explain(program, obs, _catch_all_candidates(program, obs), exact)
    return [expl for _, expl in ranked] or [UNEXPLAINED]


def label_sets(explanations: list[Explanation]) -> list[list[str]]:
    return [list(e.kinds) for e in explanations]


# brute-force oracle


@dataclass(frozen=True)
class Hypothesis:
    index: int
    occurrence: int
    cycle: int
    surface: Surface
    effect: Effect

    @property
    def event(self) -> FaultEvent:
        return FaultEvent(self.cycle, self.surface, self.effect)


@dataclass(frozen=True)
class OracleResult:
    hypothesis: Hypothesis
    completed: bool
    observation: Observation | None
    successful: bool


ORACLE_MAX_N = 64


def _dynamic_trace(program: TestProgram) -> list[tuple[int, int, int]]:
    """(instruction index, occurrence, start cycle) of every golden dynamic instruction."""
    state = program.initial_state(warm=True)
    seen: dict[int, int] = defaultdict(int)
    trace = []
    while not state.halted:
        idx = (state.pc - program.entry) >> 2
        seen[idx] += 1
        trace.append((idx, seen[idx], state.cycle))
        step(state)
    return trace


def oracle_hypotheses(program: TestProgram) -> list[Hypothesis]:
    out = []
    for idx, occ, cycle in _dynamic_trace(program):
        out.append(Hypothesis(idx, occ, cycle, Surface.EXECUTE, Effect.skip()))
        out += [Hypothesis(idx, occ, cycle, Surface.EXECUTE, Effect.flip(1 << b)) for b in range(32)]
        if decode(program.text[idx]).kind is Kind.LW:
            out.append(Hypothesis(idx, occ, cycle, Surface.DCACHE_LOAD, Effect.replace(program.sentinel)))
    return out


def oracle_exhaustive(test, n: int) -> list[OracleResult]:
    """Simulate every single-event hypothesis by plain stepping from reset."""
    if not 1 <= n <= ORACLE_MAX_N:
        raise ValueError(f"the oracle is limited to n <= {ORACLE_MAX_N}")
    program = build(test, n)
    results = []
    for h in oracle_hypotheses(program):
        res = run(program, FaultSchedule((h.event,), ground_truth=True), accelerate=False)
        if res.termination is not Termination.COMPLETED:
            results.append(OracleResult(h, False, None, False))
            continue
        obs = Observation.from_state(program, res.final_state)
        results.append(OracleResult(h, True, obs, not program.expected(res.final_state)))
    return results


def check_against_oracle(test, n: int) -> tuple[int, list[tuple[OracleResult, list[Explanation]]]]:
    """Attribute every Successful oracle outcome; return (checked, failures)."""
    program = build(test, n)
    failures = []
    checked = 0
    for res in oracle_exhaustive(test, n):
        if not res.successful:
            continue
        checked += 1
        expls = attribute(res.observation)
        ok_kinds = consistent_kinds(program, res.hypothesis.index, res.hypothesis.surface)
        if not any(not e.unexplained and ok_kinds & {l.kind for l in e.labels} for e in expls):
            failures.append((res, expls))
    return checked, failures
