"""RV32I subset: instruction kinds with their encoder and decoder.

Only the handful of instructions the characterization tests need are decoded.
Every other 32-bit word decodes to ``Kind.ILLEGAL``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

MASK32 = 0xFFFFFFFF

REG_NAMES = (
    "zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 "
    "a6 a7 s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6"
).split()

ZERO, RA, SP, GP, TP, T0, T1, T2 = range(8)

OP_IMM = 0b0010011
OP = 0b0110011
LOAD = 0b0000011
STORE = 0b0100011
BRANCH = 0b1100011
JAL_OP = 0b1101111
LUI_OP = 0b0110111


class Kind(enum.Enum):
    ADDI = "addi"
    ADD = "add"
    SUB = "sub"
    LW = "lw"
    SW = "sw"
    LUI = "lui"
    BLT = "blt"
    BGE = "bge"
    BNE = "bne"
    JAL = "jal"
    NOP = "nop"
    ILLEGAL = "illegal"


BRANCH_FUNCT3 = {Kind.BNE: 0b001, Kind.BLT: 0b100, Kind.BGE: 0b101}
_FUNCT3_BRANCH = {v: k for k, v in BRANCH_FUNCT3.items()}


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def to_signed(value: int) -> int:
    return sext(value, 32)


@dataclass(frozen=True)
class Instruction:
    kind: Kind
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    raw: int = 0

    @property
    def is_nop(self) -> bool:
        return self.kind is Kind.NOP or (self.kind is Kind.ADDI and self.rd == 0)

    def __str__(self) -> str:
        return disassemble(self)


def _i_type(imm: int, rs1: int, funct3: int, rd: int, opcode: int) -> int:
    return ((imm & 0xFFF) << 20) | (rs1 << 15) | (funct3 << 12) | (rd << 7) | opcode


def encode(ins: Instruction) -> int:
    """Encode an instruction; ``raw`` is ignored."""
    k = ins.kind
    if k is Kind.NOP:
        return 0x00000013
    if k is Kind.ADDI:
        if not -2048 <= ins.imm <= 2047:
            raise ValueError(f"addi immediate out of range: {ins.imm}")
        return _i_type(ins.imm, ins.rs1, 0, ins.rd, OP_IMM)
    if k in (Kind.ADD, Kind.SUB):
        funct7 = 0x20 if k is Kind.SUB else 0
        return (funct7 << 25) | (ins.rs2 << 20) | (ins.rs1 << 15) | (ins.rd << 7) | OP
    if k is Kind.LW:
        if not -2048 <= ins.imm <= 2047:
            raise ValueError(f"lw offset out of range: {ins.imm}")
        return _i_type(ins.imm, ins.rs1, 0b010, ins.rd, LOAD)
    if k is Kind.SW:
        if not -2048 <= ins.imm <= 2047:
            raise ValueError(f"sw offset out of range: {ins.imm}")
        imm = ins.imm & 0xFFF
        return ((imm >> 5) << 25) | (ins.rs2 << 20) | (ins.rs1 << 15) | (0b010 << 12) | ((imm & 0x1F) << 7) | STORE
    if k is Kind.LUI:
        return ((ins.imm & 0xFFFFF) << 12) | (ins.rd << 7) | LUI_OP
    if k in BRANCH_FUNCT3:
        if ins.imm % 2 or not -4096 <= ins.imm <= 4094:
            raise ValueError(f"branch offset invalid: {ins.imm}")
        imm = ins.imm & 0x1FFF
        return (
            ((imm >> 12) & 1) << 31
            | ((imm >> 5) & 0x3F) << 25
            | ins.rs2 << 20
            | ins.rs1 << 15
            | BRANCH_FUNCT3[k] << 12
            | ((imm >> 1) & 0xF) << 8
            | ((imm >> 11) & 1) << 7
            | BRANCH
        )
    if k is Kind.JAL:
        if ins.imm % 2 or not -(1 << 20) <= ins.imm < (1 << 20):
            raise ValueError(f"jal offset invalid: {ins.imm}")
        imm = ins.imm & 0x1FFFFF
        return (
            ((imm >> 20) & 1) << 31
            | ((imm >> 1) & 0x3FF) << 21
            | ((imm >> 11) & 1) << 20
            | ((imm >> 12) & 0xFF) << 12
            | ins.rd << 7
            | JAL_OP
        )
    raise ValueError(f"cannot encode {k}")


@lru_cache(maxsize=1 << 16)
def decode(word: int) -> Instruction:
    """Decode a 32-bit word. Total: unknown encodings become ILLEGAL."""
    word &= MASK32
    opcode = word & 0x7F
    rd = (word >> 7) & 0x1F
    funct3 = (word >> 12) & 0x7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    funct7 = word >> 25
    if opcode == OP_IMM and funct3 == 0:
        return Instruction(Kind.ADDI, rd=rd, rs1=rs1, imm=sext(word >> 20, 12), raw=word)
    if opcode == OP and funct3 == 0 and funct7 in (0, 0x20):
        kind = Kind.SUB if funct7 else Kind.ADD
        return Instruction(kind, rd=rd, rs1=rs1, rs2=rs2, raw=word)
    if opcode == LOAD and funct3 == 0b010:
        return Instruction(Kind.LW, rd=rd, rs1=rs1, imm=sext(word >> 20, 12), raw=word)
    if opcode == STORE and funct3 == 0b010:
        imm = sext(((word >> 25) << 5) | ((word >> 7) & 0x1F), 12)
        return Instruction(Kind.SW, rs1=rs1, rs2=rs2, imm=imm, raw=word)
    if opcode == LUI_OP:
        return Instruction(Kind.LUI, rd=rd, imm=word >> 12, raw=word)
    if opcode == BRANCH and funct3 in _FUNCT3_BRANCH:
        imm = (
            ((word >> 31) & 1) << 12
            | ((word >> 7) & 1) << 11
            | ((word >> 25) & 0x3F) << 5
            | ((word >> 8) & 0xF) << 1
        )
        return Instruction(_FUNCT3_BRANCH[funct3], rs1=rs1, rs2=rs2, imm=sext(imm, 13), raw=word)
    if opcode == JAL_OP:
        imm = (
            ((word >> 31) & 1) << 20
            | ((word >> 12) & 0xFF) << 12
            | ((word >> 20) & 1) << 11
            | ((word >> 21) & 0x3FF) << 1
        )
        return Instruction(Kind.JAL, rd=rd, imm=sext(imm, 21), raw=word)
    return Instruction(Kind.ILLEGAL, raw=word)


def disassemble(ins: Instruction, addr: int | None = None) -> str:
    r = REG_NAMES
    k = ins.kind
    if k is Kind.NOP or (k is Kind.ADDI and ins.rd == 0 and ins.rs1 == 0 and ins.imm == 0):
        return "nop"
    if k is Kind.ADDI:
        return f"addi {r[ins.rd]}, {r[ins.rs1]}, {ins.imm}"
    if k in (Kind.ADD, Kind.SUB):
        return f"{k.value} {r[ins.rd]}, {r[ins.rs1]}, {r[ins.rs2]}"
    if k is Kind.LW:
        return f"lw {r[ins.rd]}, {ins.imm}({r[ins.rs1]})"
    if k is Kind.SW:
        return f"sw {r[ins.rs2]}, {ins.imm}({r[ins.rs1]})"
    if k is Kind.LUI:
        return f"lui {r[ins.rd]}, {ins.imm:#x}"
    if k in BRANCH_FUNCT3:
        target = f"{addr + ins.imm:#010x}" if addr is not None else f"{ins.imm:+d}"
        return f"{k.value} {r[ins.rs1]}, {r[ins.rs2]}, {target}"
    if k is Kind.JAL:
        target = f"{addr + ins.imm:#010x}" if addr is not None else f"{ins.imm:+d}"
        return f"jal {r[ins.rd]}, {target}"
    return f".word {ins.raw:#010x}"


# assembler shorthands used by the program builders


def addi(rd: int, rs1: int, imm: int) -> int:
    return encode(Instruction(Kind.ADDI, rd=rd, rs1=rs1, imm=imm))


def lui(rd: int, imm20: int) -> int:
    return encode(Instruction(Kind.LUI, rd=rd, imm=imm20))


def lw(rd: int, offset: int, base: int) -> int:
    return encode(Instruction(Kind.LW, rd=rd, rs1=base, imm=offset))


def sw(src: int, offset: int, base: int) -> int:
    return encode(Instruction(Kind.SW, rs1=base, rs2=src, imm=offset))


def blt(rs1: int, rs2: int, offset: int) -> int:
    return encode(Instruction(Kind.BLT, rs1=rs1, rs2=rs2, imm=offset))


def load_immediate(rd: int, value: int) -> list[int]:
    """``li rd, value`` as one addi or a lui/addi pair."""
    value &= MASK32
    signed = to_signed(value)
    if -2048 <= signed <= 2047:
        return [addi(rd, ZERO, signed)]
    upper = ((value + 0x800) >> 12) & 0xFFFFF
    lower = sext(value, 12)
    words = [lui(rd, upper)]
    if lower:
        words.append(addi(rd, rd, lower))
    return words
