"""Two-pass assembler for the instruction subset, plus flat-binary image I/O.

Source grammar, one item per line::

    label:                  # labels may share a line with an instruction
    addiu $29,$29,-56       # registers by number or alias ($sp, $fp, $ra ...)
    sw $31,52($29)
    .org 0x4001f0           # base address, before the first instruction
    .intrinsic malloc       # JAL to this label runs the built-in handler

An intrinsic label that the source never defines gets a one-instruction
``jr $31`` stub appended to the image.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .isa import (
    BY_MNEMONIC,
    INSTR_STRIDE,
    MAX_TARGET,
    REGISTER_ALIASES,
    Fmt,
    Instruction,
    Opcode,
    decode,
    encode,
    format_instruction,
)

DEFAULT_BASE = 0x00400000
INTRINSICS = frozenset({"malloc", "realloc", "free"})

_LABEL_RE = re.compile(r"^([A-Za-z_.][\w.$]*)\s*:")
_MEM_RE = re.compile(r"^(.*)\((.+)\)$")


class AssemblyError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownMnemonic(AssemblyError):
    pass


class UnresolvedLabel(AssemblyError):
    pass


class ImmediateOutOfRange(AssemblyError):
    pass


class DuplicateLabel(AssemblyError):
    pass


@dataclass
class ProgramImage:
    base_address: int = DEFAULT_BASE
    words: list[int] = field(default_factory=list)
    symbols: dict[str, int] = field(default_factory=dict)
    intrinsic_labels: frozenset[str] = frozenset()

    @property
    def end_address(self) -> int:
        return self.base_address + INSTR_STRIDE * len(self.words)

    def address_of(self, index: int) -> int:
        return self.base_address + INSTR_STRIDE * index

    def instructions(self) -> list[Instruction]:
        return [decode(w) for w in self.words]

    def intrinsic_addresses(self) -> dict[int, str]:
        return {self.symbols[name]: name for name in self.intrinsic_labels}

    @property
    def entry(self) -> int | None:
        if "main" in self.symbols:
            return self.symbols["main"]
        return self.base_address if self.words else None


def parse_register(token: str, line: int | None = None) -> int:
    token = token.strip()
    if not token.startswith("$"):
        raise AssemblyError(f"expected register, got {token!r}", line)
    name = token[1:].lower()
    if name.isdigit() and int(name) < 32:
        return int(name)
    if name in REGISTER_ALIASES:
        return REGISTER_ALIASES[name]
    raise AssemblyError(f"unknown register {token!r}", line)


def _parse_int(token: str, line: int | None) -> int:
    try:
        return int(token.strip(), 0)
    except ValueError:
        raise AssemblyError(f"bad integer {token!r}", line) from None


def _is_number(token: str) -> bool:
    return bool(re.fullmatch(r"-?(0[xX][0-9a-fA-F]+|\d+)", token.strip()))


@dataclass
class _Pending:
    op: Opcode
    operands: list[str]
    line: int
    address: int


def _split_operands(text: str) -> list[str]:
    return [t.strip() for t in text.split(",")] if text.strip() else []


def assemble(source: str) -> ProgramImage:
    base = DEFAULT_BASE
    pending: list[_Pending] = []
    symbols: dict[str, int] = {}
    intrinsics: set[str] = set()

    # pass 1: addresses and labels
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(text)
            if not m:
                break
            name = m.group(1)
            if name in symbols:
                raise DuplicateLabel(f"label {name!r} defined twice", lineno)
            symbols[name] = base + INSTR_STRIDE * len(pending)
            text = text[m.end():].strip()
        if not text:
            continue
        head, _, rest = text.partition(" ")
        head = head.lower()
        if head == ".org":
            if pending or symbols:
                raise AssemblyError(".org must precede all labels and instructions", lineno)
            base = _parse_int(rest, lineno)
            if base % INSTR_STRIDE or base < 0:
                raise AssemblyError(f".org address {base:#x} is not 8-aligned", lineno)
            continue
        if head == ".intrinsic":
            name = rest.strip()
            if name not in INTRINSICS:
                raise AssemblyError(f"unknown intrinsic {name!r}", lineno)
            intrinsics.add(name)
            continue
        if head.startswith("."):
            raise AssemblyError(f"unknown directive {head!r}", lineno)
        op = BY_MNEMONIC.get(head)
        if op is None:
            raise UnknownMnemonic(f"unknown mnemonic {head!r}", lineno)
        pending.append(_Pending(op, _split_operands(rest), lineno, base + INSTR_STRIDE * len(pending)))

    for name in sorted(intrinsics - symbols.keys()):
        symbols[name] = base + INSTR_STRIDE * len(pending)
        pending.append(_Pending(Opcode.JR, ["$31"], 0, symbols[name]))

    # pass 2: operands
    words = [encode(_build(p, symbols)) for p in pending]
    return ProgramImage(base, words, symbols, frozenset(intrinsics))


def _imm(token: str, line: int, lo: int, hi: int) -> int:
    value = _parse_int(token, line)
    if not lo <= value <= hi:
        raise ImmediateOutOfRange(f"immediate {value} outside [{lo}, {hi}]", line)
    return value


def _signed16(value: int) -> int:
    return value - 0x10000 if value & 0x8000 else value


def _build(p: _Pending, symbols: dict[str, int]) -> Instruction:
    op, ops, line = p.op, p.operands, p.line
    fmt = op.fmt
    expected = {Fmt.R3: 3, Fmt.SHIFT: 3, Fmt.IMM: 3, Fmt.UIMM: 3, Fmt.MEM: 2, Fmt.LUI: 2,
                Fmt.BRANCH: 3, Fmt.JUMP: 1, Fmt.JR: 1, Fmt.NONE: 0}[fmt]
    if len(ops) != expected:
        raise AssemblyError(f"{op.mnemonic} takes {expected} operands, got {len(ops)}", line)
    reg = lambda t: parse_register(t, line)  # noqa: E731

    if fmt is Fmt.R3:
        return Instruction(op, rd=reg(ops[0]), rs=reg(ops[1]), rt=reg(ops[2]))
    if fmt is Fmt.SHIFT:
        return Instruction(op, rd=reg(ops[0]), rt=reg(ops[1]), imm=_imm(ops[2], line, 0, 31))
    if fmt is Fmt.IMM:
        return Instruction(op, rt=reg(ops[0]), rs=reg(ops[1]), imm=_imm(ops[2], line, -0x8000, 0x7FFF))
    if fmt is Fmt.UIMM:
        return Instruction(op, rt=reg(ops[0]), rs=reg(ops[1]),
                           imm=_signed16(_imm(ops[2], line, -0x8000, 0xFFFF) & 0xFFFF))
    if fmt is Fmt.LUI:
        return Instruction(op, rt=reg(ops[0]), imm=_signed16(_imm(ops[1], line, -0x8000, 0xFFFF) & 0xFFFF))
    if fmt is Fmt.MEM:
        m = _MEM_RE.match(ops[1])
        if not m:
            raise AssemblyError(f"expected offset(base), got {ops[1]!r}", line)
        offset = _imm(m.group(1) or "0", line, -0x8000, 0x7FFF)
        return Instruction(op, rt=reg(ops[0]), rs=reg(m.group(2)), imm=offset)
    if fmt is Fmt.BRANCH:
        target = ops[2]
        if _is_number(target):
            offset = _imm(target, line, -0x8000, 0x7FFF)
        else:
            addr = _resolve(target, symbols, line)
            offset = (addr - (p.address + INSTR_STRIDE)) // INSTR_STRIDE
            if not -0x8000 <= offset <= 0x7FFF:
                raise ImmediateOutOfRange(f"branch to {target!r} out of range", line)
        return Instruction(op, rs=reg(ops[0]), rt=reg(ops[1]), imm=offset)
    if fmt is Fmt.JUMP:
        token = ops[0]
        addr = _parse_int(token, line) if _is_number(token) else _resolve(token, symbols, line)
        if addr % INSTR_STRIDE or not 0 <= addr < MAX_TARGET:
            raise ImmediateOutOfRange(f"jump target {addr:#x} not encodable", line)
        return Instruction(op, target=addr)
    if fmt is Fmt.JR:
        return Instruction(op, rs=reg(ops[0]))
    return Instruction(op)


def _resolve(name: str, symbols: dict[str, int], line: int) -> int:
    try:
        return symbols[name]
    except KeyError:
        raise UnresolvedLabel(f"undefined label {name!r}", line) from None


def disassemble_all(image: ProgramImage) -> str:
    """Listing that re-assembles to an instruction-identical image.

    Jump and branch operands are numeric; labels are re-emitted at their
    addresses so entry point and intrinsics survive the round trip.
    """
    by_addr: dict[int, list[str]] = {}
    for name, addr in sorted(image.symbols.items()):
        by_addr.setdefault(addr, []).append(name)
    lines = [f".org {image.base_address:#x}"]
    lines += [f".intrinsic {name}" for name in sorted(image.intrinsic_labels)]
    for i, word in enumerate(image.words):
        addr = image.address_of(i)
        lines += [f"{name}:" for name in by_addr.get(addr, [])]
        lines.append(f"    {format_instruction(decode(word))}")
    return "\n".join(lines) + "\n"


def write_image(image: ProgramImage, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` (little-endian words in 8-byte slots) and ``path.sym``."""
    path = Path(path)
    blob = bytearray()
    for word in image.words:
        blob += word.to_bytes(4, "little") + bytes(4)
    path.write_bytes(bytes(blob))
    sym = path.with_name(path.name + ".sym")
    lines = [f"{image.base_address:#010x} .org"]
    for name, addr in sorted(image.symbols.items(), key=lambda kv: (kv[1], kv[0])):
        suffix = " intrinsic" if name in image.intrinsic_labels else ""
        lines.append(f"{addr:#010x} {name}{suffix}")
    sym.write_text("\n".join(lines) + "\n")
    return path, sym


def read_image(path: str | Path) -> ProgramImage:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) % INSTR_STRIDE:
        raise ValueError(f"{path}: size {len(blob)} is not a multiple of {INSTR_STRIDE}")
    words = [int.from_bytes(blob[i:i + 4], "little") for i in range(0, len(blob), INSTR_STRIDE)]
    base, symbols, intrinsics = DEFAULT_BASE, {}, set()
    sym = path.with_name(path.name + ".sym")
    if sym.exists():
        for line in sym.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            addr = int(parts[0], 0)
            if parts[1] == ".org":
                base = addr
                continue
            symbols[parts[1]] = addr
            if len(parts) > 2 and parts[2] == "intrinsic":
                intrinsics.add(parts[1])
    for word in words:
        decode(word)
    return ProgramImage(base, words, symbols, frozenset(intrinsics))
