"""MIPS-like instruction subset: fields, 32-bit encoding and disassembly.

Every instruction occupies an 8-byte slot in the text segment (one encoded
32-bit word followed by 4 bytes of zero padding), so listing addresses
advance by 8 as in PISA object dumps.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

WORD_MASK = 0xFFFFFFFF
INSTR_STRIDE = 8

FP = 30
SP = 29
RA = 31

REGISTER_ALIASES = {
    "zero": 0, "at": 1, "v0": 2, "v1": 3, "a0": 4, "a1": 5, "a2": 6, "a3": 7,
    "t0": 8, "t1": 9, "t2": 10, "t3": 11, "t4": 12, "t5": 13, "t6": 14, "t7": 15,
    "s0": 16, "s1": 17, "s2": 18, "s3": 19, "s4": 20, "s5": 21, "s6": 22, "s7": 23,
    "t8": 24, "t9": 25, "k0": 26, "k1": 27, "gp": 28, "sp": 29, "fp": 30, "s8": 30,
    "ra": 31,
}


class IllegalInstructionWord(ValueError):
    """A 32-bit word that is not the canonical encoding of any subset instruction."""


class Fmt(enum.Enum):
    R3 = "rd,rs,rt"
    SHIFT = "rd,rt,sa"
    IMM = "rt,rs,imm"
    UIMM = "rt,rs,uimm"
    MEM = "rt,imm(rs)"
    LUI = "rt,uimm"
    BRANCH = "rs,rt,off"
    JUMP = "target"
    JR = "rs"
    NONE = ""


class Opcode(enum.Enum):
    # value = (primary opcode field, operand format)
    ADDIU = (1, Fmt.IMM)
    ADDU = (2, Fmt.R3)
    SUBU = (3, Fmt.R3)
    SLL = (4, Fmt.SHIFT)
    LW = (5, Fmt.MEM)
    SW = (6, Fmt.MEM)
    LB = (7, Fmt.MEM)
    SB = (8, Fmt.MEM)
    LUI = (9, Fmt.LUI)
    ORI = (10, Fmt.UIMM)
    SLT = (11, Fmt.R3)
    SLTI = (12, Fmt.IMM)
    BEQ = (13, Fmt.BRANCH)
    BNE = (14, Fmt.BRANCH)
    J = (15, Fmt.JUMP)
    JAL = (16, Fmt.JUMP)
    JR = (17, Fmt.JR)
    HALT = (0x3F, Fmt.NONE)

    @property
    def code(self) -> int:
        return self.value[0]

    @property
    def fmt(self) -> Fmt:
        return self.value[1]

    @property
    def mnemonic(self) -> str:
        return self.name.lower()


_BY_CODE = {op.code: op for op in Opcode}
BY_MNEMONIC = {op.mnemonic: op for op in Opcode}

LOADS = frozenset({Opcode.LW, Opcode.LB})
STORES = frozenset({Opcode.SW, Opcode.SB})
MEMORY_OPS = LOADS | STORES
ACCESS_WIDTH = {Opcode.LW: 4, Opcode.SW: 4, Opcode.LB: 1, Opcode.SB: 1}

HALT_WORD = 0xFFFFFFFF
MAX_TARGET = 1 << 29  # 26-bit field holding target >> 3

# fields each format actually uses; everything else must be zero
_USED = {
    Fmt.R3: {"rd", "rs", "rt"},
    Fmt.SHIFT: {"rd", "rt", "imm"},
    Fmt.IMM: {"rt", "rs", "imm"},
    Fmt.UIMM: {"rt", "rs", "imm"},
    Fmt.MEM: {"rt", "rs", "imm"},
    Fmt.LUI: {"rt", "imm"},
    Fmt.BRANCH: {"rs", "rt", "imm"},
    Fmt.JUMP: {"target"},
    Fmt.JR: {"rs"},
    Fmt.NONE: set(),
}


@dataclass(frozen=True, slots=True)
class Instruction:
    op: Opcode
    rs: int = 0
    rt: int = 0
    rd: int = 0
    imm: int = 0
    target: int = 0

    def __post_init__(self) -> None:
        used = _USED[self.op.fmt]
        for name in ("rs", "rt", "rd"):
            value = getattr(self, name)
            if not 0 <= value < 32:
                raise ValueError(f"{self.op.mnemonic}: register {name}={value} out of range")
            if name not in used and value:
                raise ValueError(f"{self.op.mnemonic}: unused field {name} must be zero")
        if "imm" not in used and self.imm:
            raise ValueError(f"{self.op.mnemonic}: unused field imm must be zero")
        if self.op is Opcode.SLL:
            if not 0 <= self.imm < 32:
                raise ValueError(f"sll: shift amount {self.imm} out of range 0..31")
        elif not -0x8000 <= self.imm <= 0x7FFF:
            raise ValueError(f"{self.op.mnemonic}: immediate {self.imm} does not fit 16 signed bits")
        if "target" not in used:
            if self.target:
                raise ValueError(f"{self.op.mnemonic}: unused field target must be zero")
        elif self.target % INSTR_STRIDE or not 0 <= self.target < MAX_TARGET:
            raise ValueError(f"{self.op.mnemonic}: bad jump target {self.target:#x}")


def _sext16(value: int) -> int:
    value &= 0xFFFF
    return value - 0x10000 if value & 0x8000 else value


def encode(instr: Instruction) -> int:
    op = instr.op
    if op is Opcode.HALT:
        return HALT_WORD
    word = op.code << 26
    fmt = op.fmt
    if fmt is Fmt.JUMP:
        return word | (instr.target >> 3)
    word |= instr.rs << 21 | instr.rt << 16
    if fmt is Fmt.R3:
        word |= instr.rd << 11
    elif fmt is Fmt.SHIFT:
        word |= instr.rd << 11 | instr.imm << 6
    elif fmt in (Fmt.IMM, Fmt.UIMM, Fmt.MEM, Fmt.LUI, Fmt.BRANCH):
        word |= instr.imm & 0xFFFF
    return word


def decode(word: int) -> Instruction:
    """Inverse of :func:`encode`; rejects every non-canonical word."""
    if word == HALT_WORD:
        return Instruction(Opcode.HALT)
    op = _BY_CODE.get(word >> 26 & 0x3F)
    if op is None or op is Opcode.HALT:
        raise IllegalInstructionWord(f"illegal instruction word {word:#010x}")
    fmt = op.fmt
    rs, rt, rd = word >> 21 & 31, word >> 16 & 31, word >> 11 & 31
    try:
        if fmt is Fmt.JUMP:
            instr = Instruction(op, target=(word & 0x3FFFFFF) << 3)
        elif fmt is Fmt.R3:
            instr = Instruction(op, rs=rs, rt=rt, rd=rd)
        elif fmt is Fmt.SHIFT:
            instr = Instruction(op, rs=rs, rt=rt, rd=rd, imm=word >> 6 & 31)
        elif fmt is Fmt.JR:
            instr = Instruction(op, rs=rs, rt=rt)
        else:
            instr = Instruction(op, rs=rs, rt=rt, imm=_sext16(word))
    except ValueError as exc:
        raise IllegalInstructionWord(f"illegal instruction word {word:#010x}: {exc}") from None
    if encode(instr) != word:
        raise IllegalInstructionWord(f"non-canonical instruction word {word:#010x}")
    return instr


def format_instruction(instr: Instruction) -> str:
    """Render in the listing syntax accepted by the assembler."""
    m, fmt = instr.op.mnemonic, instr.op.fmt
    if fmt is Fmt.R3:
        return f"{m} ${instr.rd},${instr.rs},${instr.rt}"
    if fmt is Fmt.SHIFT:
        return f"{m} ${instr.rd},${instr.rt},{instr.imm:#x}"
    if fmt is Fmt.IMM:
        return f"{m} ${instr.rt},${instr.rs},{instr.imm}"
    if fmt is Fmt.UIMM:
        return f"{m} ${instr.rt},${instr.rs},{instr.imm & 0xFFFF:#x}"
    if fmt is Fmt.MEM:
        return f"{m} ${instr.rt},{instr.imm}(${instr.rs})"
    if fmt is Fmt.LUI:
        return f"{m} ${instr.rt},{instr.imm & 0xFFFF:#x}"
    if fmt is Fmt.BRANCH:
        return f"{m} ${instr.rs},${instr.rt},{instr.imm}"
    if fmt is Fmt.JUMP:
        return f"{m} {instr.target:#x}"
    if fmt is Fmt.JR:
        return f"{m} ${instr.rs}"
    return m


def disassemble(word: int) -> str:
    return format_instruction(decode(word))


def branch_target(pc: int, instr: Instruction) -> int:
    return (pc + INSTR_STRIDE + instr.imm * INSTR_STRIDE) & WORD_MASK
