"""Functional fetch-decode-execute model with a segmented memory and
malloc/realloc/free intrinsics backed by a bump allocator.

The machine knows nothing about the VRT.  Each :func:`step` returns the list
of :class:`ExecEvent` it produced; :func:`run` hands those events to any
observers after the instruction retires, so observers can never change how
many instructions execute.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

from .assembler import ProgramImage
from .isa import (
    ACCESS_WIDTH,
    INSTR_STRIDE,
    RA,
    SP,
    WORD_MASK,
    IllegalInstructionWord,
    Instruction,
    Opcode,
    branch_target,
    decode,
)

TEXT_BASE = 0x00400000
DATA_BASE = 0x10000000
HEAP_BASE = 0x10040000
HEAP_LIMIT = 0x11040000
STACK_LIMIT = 0x7F000000
STACK_END = 0x80000000  # exclusive; highest stack byte is 0x7FFFFFFF
DEFAULT_STACK_TOP = 0x7FFFFF00
SENTINEL_RA = 0xFFFFFFF8

HEAP_ALIGN = 8
PAGE = 4096


class MachineError(Exception):
    pass


class IllegalInstruction(MachineError):
    pass


class MemoryFault(MachineError):
    pass


class UnalignedAccess(MachineError):
    pass


class ImageTooLarge(MachineError):
    pass


class MissingEntry(MachineError):
    pass


class HeapExhausted(MachineError):
    pass


class BadRealloc(MachineError):
    pass


class BadFree(MachineError):
    pass


class DoubleFree(BadFree):
    pass


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    end: int  # exclusive
    writable: bool = True

    def __contains__(self, addr: int) -> bool:
        return self.start <= addr < self.end


@dataclass(frozen=True)
class MemoryLayout:
    text: Segment = Segment("text", TEXT_BASE, DATA_BASE, writable=False)
    data: Segment = Segment("data", DATA_BASE, HEAP_BASE)
    heap: Segment = Segment("heap", HEAP_BASE, HEAP_LIMIT)
    stack: Segment = Segment("stack", STACK_LIMIT, STACK_END)

    @property
    def segments(self) -> tuple[Segment, ...]:
        return (self.text, self.data, self.heap, self.stack)

    def classify(self, addr: int) -> Segment | None:
        for seg in self.segments:
            if addr in seg:
                return seg
        return None

    def is_managed(self, addr: int) -> bool:
        """Stack and heap are the only segments the VRT describes."""
        return addr in self.stack or addr in self.heap


LAYOUT = MemoryLayout()


class Memory:
    """Sparse little-endian byte store; untouched bytes read as zero."""

    def __init__(self, layout: MemoryLayout = LAYOUT):
        self.layout = layout
        self._pages: dict[int, bytearray] = {}

    def check(self, addr: int, width: int, write: bool) -> None:
        seg = self.layout.classify(addr)
        if seg is None or addr + width > seg.end:
            raise MemoryFault(f"access to {addr:#010x} outside all segments")
        if write and not seg.writable:
            raise MemoryFault(f"write to read-only {seg.name} segment at {addr:#010x}")

    def _page(self, addr: int) -> bytearray:
        page = self._pages.get(addr // PAGE)
        if page is None:
            page = self._pages[addr // PAGE] = bytearray(PAGE)
        return page

    def read(self, addr: int, width: int) -> int:
        self.check(addr, width, write=False)
        return int.from_bytes(self.read_bytes(addr, width), "little")

    def write(self, addr: int, width: int, value: int) -> None:
        self.check(addr, width, write=True)
        self.write_bytes(addr, (value & ((1 << 8 * width) - 1)).to_bytes(width, "little"))

    def read_bytes(self, addr: int, n: int) -> bytes:
        out = bytearray()
        for a in range(addr, addr + n):
            page = self._pages.get(a // PAGE)
            out.append(page[a % PAGE] if page is not None else 0)
        return bytes(out)

    def write_bytes(self, addr: int, data: bytes) -> None:
        """Unchecked write; used by the loader and the intrinsics."""
        for i, b in enumerate(data):
            a = addr + i
            self._page(a)[a % PAGE] = b

    def snapshot(self) -> dict[int, bytes]:
        """Page number -> contents, for comparing two machines."""
        return {n: bytes(p) for n, p in self._pages.items()}


@dataclass
class HeapBlock:
    base: int
    size: int
    live: bool = True

    @property
    def end(self) -> int:
        return self.base + self.size


class BumpAllocator:
    """Monotone allocator: 8-aligned blocks, freed space is never reused."""

    def __init__(self, start: int = HEAP_BASE, limit: int = HEAP_LIMIT):
        self.start = start
        self.limit = limit
        self.next = start
        self.blocks: dict[int, HeapBlock] = {}
        self.calls: Counter[str] = Counter()

    def malloc(self, size: int) -> int:
        self.calls["malloc"] += 1
        return self._allocate(size)

    def _allocate(self, size: int) -> int:
        if size <= 0:
            return 0
        base = self.next
        end = base + size
        if end > self.limit:
            raise HeapExhausted(f"cannot allocate {size} bytes")
        self.next = -(-end // HEAP_ALIGN) * HEAP_ALIGN
        self.blocks[base] = HeapBlock(base, size)
        return base

    def realloc(self, memory: Memory, old: int, new_size: int) -> int:
        self.calls["realloc"] += 1
        if old == 0:
            return self._allocate(new_size)
        block = self.blocks.get(old)
        if block is None or not block.live:
            raise BadRealloc(f"realloc of {old:#010x}, not a live block base")
        new = self._allocate(new_size)
        if new:
            memory.write_bytes(new, memory.read_bytes(old, min(block.size, new_size)))
        block.live = False
        return new

    def free(self, base: int) -> None:
        self.calls["free"] += 1
        if base == 0:
            return
        block = self.blocks.get(base)
        if block is None:
            raise BadFree(f"free of {base:#010x}, not a block base")
        if not block.live:
            raise DoubleFree(f"double free of {base:#010x}")
        block.live = False

    def live_blocks(self) -> list[HeapBlock]:
        return [b for b in self.blocks.values() if b.live]

    def dead_blocks(self) -> list[HeapBlock]:
        return [b for b in self.blocks.values() if not b.live]

    def dead_block_containing(self, addr: int) -> HeapBlock | None:
        for block in self.blocks.values():
            if not block.live and block.base <= addr < block.end:
                return block
        return None


class EventKind(enum.Enum):
    REG_WRITE = "RegWrite"
    MEM_READ = "MemRead"
    MEM_WRITE = "MemWrite"
    CALL = "Call"
    RETURN = "Return"
    INTRINSIC_ALLOC = "IntrinsicAlloc"
    INTRINSIC_REALLOC = "IntrinsicRealloc"
    INTRINSIC_FREE = "IntrinsicFree"
    EFFECTIVE_ADDRESS = "EffectiveAddress"


@dataclass(frozen=True, slots=True)
class ExecEvent:
    """One architectural effect of an instruction.

    Only the fields relevant to ``kind`` are set.  ``srcs`` holds the
    (register, value) pairs an instruction read, captured before the write,
    so observers can see operands even when the destination aliases a source.
    """

    kind: EventKind
    pc: int
    instr: Instruction
    reg: int | None = None
    value: int | None = None
    addr: int | None = None
    width: int = 0
    base_reg: int | None = None
    base_value: int | None = None
    offset: int = 0
    srcs: tuple[tuple[int, int], ...] = ()
    intrinsic: str | None = None
    args: tuple[int, int] = (0, 0)
    size: int = 0


def format_event(ev: ExecEvent) -> str:
    """One trace line: ``PC=0x... KIND detail``."""
    k = ev.kind
    if k is EventKind.REG_WRITE:
        detail = f"${ev.reg}={ev.value:#010x}"
    elif k in (EventKind.MEM_READ, EventKind.MEM_WRITE):
        detail = f"addr={ev.addr:#010x} width={ev.width} value={ev.value:#x}"
    elif k is EventKind.EFFECTIVE_ADDRESS:
        detail = f"base=${ev.base_reg} offset={ev.offset} addr={ev.addr:#010x} width={ev.width}"
    elif k is EventKind.CALL:
        detail = f"target={ev.addr:#010x} ret={ev.value:#010x}"
        if ev.intrinsic:
            detail += f" intrinsic={ev.intrinsic} a0={ev.args[0]:#x} a1={ev.args[1]:#x}"
    elif k is EventKind.RETURN:
        detail = f"to={ev.addr:#010x}"
    elif k is EventKind.INTRINSIC_ALLOC:
        detail = f"size={ev.size} base={ev.value:#010x}"
    elif k is EventKind.INTRINSIC_REALLOC:
        detail = f"old={ev.addr:#010x} size={ev.size} base={ev.value:#010x}"
    else:
        detail = f"base={ev.addr:#010x}"
    return f"PC={ev.pc:#010x} {k.value} {detail}"


@dataclass
class MachineState:
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    pc: int = TEXT_BASE
    mem: Memory = field(default_factory=Memory)
    halted: bool = False
    instr_count: int = 0
    heap: BumpAllocator = field(default_factory=BumpAllocator)
    intrinsics: dict[int, str] = field(default_factory=dict)
    halt_reason: str | None = None
    _decoded: dict[int, Instruction] = field(default_factory=dict, repr=False)

    def set_reg(self, index: int, value: int) -> None:
        if index:
            self.regs[index] = value & WORD_MASK

    def fetch(self, pc: int) -> Instruction:
        instr = self._decoded.get(pc)
        if instr is None:
            if pc % INSTR_STRIDE or pc not in self.mem.layout.text:
                raise IllegalInstruction(f"fetch from {pc:#010x}")
            try:
                instr = decode(self.mem.read(pc, 4))
            except IllegalInstructionWord as exc:
                raise IllegalInstruction(f"at {pc:#010x}: {exc}") from None
            self._decoded[pc] = instr
        return instr


def load(image: ProgramImage, stack_top: int = DEFAULT_STACK_TOP) -> MachineState:
    entry = image.entry
    if entry is None:
        raise MissingEntry("image has no instructions and no 'main' symbol")
    text = LAYOUT.text
    if image.base_address < text.start or image.end_address > text.end:
        raise ImageTooLarge(f"image [{image.base_address:#x}, {image.end_address:#x}) exceeds text segment")
    state = MachineState(pc=entry, intrinsics=image.intrinsic_addresses())
    for i, word in enumerate(image.words):
        state.mem.write_bytes(image.address_of(i), word.to_bytes(4, "little"))
    state.regs[SP] = stack_top & WORD_MASK
    state.regs[RA] = SENTINEL_RA
    return state


def _signed(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


def step(state: MachineState) -> list[ExecEvent]:
    if state.halted:
        raise MachineError("machine is halted")
    pc = state.pc
    instr = state.fetch(pc)
    regs = state.regs
    op, rs, rt, rd, imm = instr.op, instr.rs, instr.rt, instr.rd, instr.imm
    events: list[ExecEvent] = []
    next_pc = pc + INSTR_STRIDE

    def write(reg: int, value: int, srcs: tuple[tuple[int, int], ...] = ()) -> None:
        if reg:
            state.set_reg(reg, value)
            events.append(ExecEvent(EventKind.REG_WRITE, pc, instr, reg=reg, value=regs[reg], srcs=srcs))

    if op is Opcode.ADDIU:
        write(rt, regs[rs] + imm, ((rs, regs[rs]),))
    elif op is Opcode.ADDU:
        write(rd, regs[rs] + regs[rt], ((rs, regs[rs]), (rt, regs[rt])))
    elif op is Opcode.SUBU:
        write(rd, regs[rs] - regs[rt], ((rs, regs[rs]), (rt, regs[rt])))
    elif op is Opcode.SLL:
        write(rd, regs[rt] << imm, ((rt, regs[rt]),))
    elif op is Opcode.SLT:
        write(rd, int(_signed(regs[rs]) < _signed(regs[rt])), ((rs, regs[rs]), (rt, regs[rt])))
    elif op is Opcode.SLTI:
        write(rt, int(_signed(regs[rs]) < imm), ((rs, regs[rs]),))
    elif op is Opcode.ORI:
        write(rt, regs[rs] | (imm & 0xFFFF), ((rs, regs[rs]),))
    elif op is Opcode.LUI:
        write(rt, (imm & 0xFFFF) << 16)
    elif op in ACCESS_WIDTH:
        width = ACCESS_WIDTH[op]
        base = regs[rs]
        addr = (base + imm) & WORD_MASK
        if addr % width:
            raise UnalignedAccess(f"{op.mnemonic} at {addr:#010x} (pc {pc:#010x})")
        store = op in (Opcode.SW, Opcode.SB)
        state.mem.check(addr, width, write=store)
        ea = ExecEvent(EventKind.EFFECTIVE_ADDRESS, pc, instr, addr=addr, width=width,
                       base_reg=rs, base_value=base, offset=imm)
        if store:
            value = regs[rt] & ((1 << 8 * width) - 1)
            state.mem.write(addr, width, value)
            events += [ea, ExecEvent(EventKind.MEM_WRITE, pc, instr, reg=rt, addr=addr, width=width, value=value)]
        else:
            value = state.mem.read(addr, width)
            if op is Opcode.LB and value & 0x80:
                value |= 0xFFFFFF00
            events += [ea, ExecEvent(EventKind.MEM_READ, pc, instr, reg=rt, addr=addr, width=width, value=value)]
            write(rt, value)
    elif op in (Opcode.BEQ, Opcode.BNE):
        if (regs[rs] == regs[rt]) == (op is Opcode.BEQ):
            next_pc = branch_target(pc, instr)
    elif op is Opcode.J:
        next_pc = instr.target
    elif op is Opcode.JAL:
        ret = pc + INSTR_STRIDE
        write(RA, ret)
        name = state.intrinsics.get(instr.target)
        if name is None:
            events.append(ExecEvent(EventKind.CALL, pc, instr, addr=instr.target, value=ret))
            next_pc = instr.target
        else:
            args = (regs[4], regs[5])
            events.append(ExecEvent(EventKind.CALL, pc, instr, addr=instr.target, value=ret,
                                    intrinsic=name, args=args))
            events += _intrinsic(state, name, args, pc, instr)
            if name != "free":
                write(2, regs[2])
            events.append(ExecEvent(EventKind.RETURN, pc, instr, addr=regs[RA], intrinsic=name))
            next_pc = regs[RA]
    elif op is Opcode.JR:
        next_pc = regs[rs]
        if rs == RA:
            events.append(ExecEvent(EventKind.RETURN, pc, instr, addr=next_pc))
    elif op is Opcode.HALT:
        state.halted = True
        state.halt_reason = "halt"

    state.instr_count += 1
    state.pc = next_pc
    if next_pc == SENTINEL_RA:
        state.halted = True
        state.halt_reason = "return"
    return events


def _intrinsic(state: MachineState, name: str, args: tuple[int, int], pc: int,
               instr: Instruction) -> list[ExecEvent]:
    heap = state.heap
    if name == "malloc":
        base = heap.malloc(args[0])
        state.regs[2] = base
        return [ExecEvent(EventKind.INTRINSIC_ALLOC, pc, instr, size=args[0], value=base)]
    if name == "realloc":
        base = heap.realloc(state.mem, args[0], args[1])
        state.regs[2] = base
        return [ExecEvent(EventKind.INTRINSIC_REALLOC, pc, instr, addr=args[0], size=args[1], value=base)]
    heap.free(args[0])
    return [ExecEvent(EventKind.INTRINSIC_FREE, pc, instr, addr=args[0])]


class RunStatus(enum.Enum):
    HALTED = "halted"
    FAULTED = "faulted"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class RunResult:
    status: RunStatus
    steps: int
    events: list[ExecEvent]
    error: MachineError | None = None


def run(state: MachineState, max_steps: int, observers=(), record: bool = True) -> RunResult:
    """Step until halt, fault or budget; each observer gets ``on_event(event, state)``."""
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    trace: list[ExecEvent] = []
    steps = 0
    while steps < max_steps:
        if state.halted:
            return RunResult(RunStatus.HALTED, steps, trace)
        try:
            events = step(state)
        except MachineError as exc:
            return RunResult(RunStatus.FAULTED, steps, trace, exc)
        steps += 1
        for ev in events:
            for obs in observers:
                obs.on_event(ev, state)
        if record:
            trace.extend(events)
    if state.halted:
        return RunResult(RunStatus.HALTED, steps, trace)
    return RunResult(RunStatus.BUDGET_EXHAUSTED, steps, trace)
