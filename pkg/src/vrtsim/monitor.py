"""Extraction unit: turns the machine's event stream into VRT mutations.

Stack variables are discovered from frame-pointer-relative addressing.  A
function is monitored when it opens with the usual prologue::

    addiu $29,$29,-N      # allocate the frame
    sw    $31,k1($29)     # save registers (any number, any order)
    sw    $30,k2($29)
    addu  $30,$0,$29      # fp <- sp

Every later ``lw/sw/lb/sb ...(offset)($30)`` or ``addiu rt,$30,offset`` with
``0 <= offset < min(k)`` names a variable starting at ``fp + offset``.  A
variable's bound is the distance to the next known offset; the highest one
extends to the saved-register area until something above it shows up.

Heap variables come from the argument/return registers around calls to the
allocation intrinsics.
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

from .isa import FP, MEMORY_OPS, SP, Instruction, Opcode
from .machine import EventKind, ExecEvent, MachineState
from .vrt import EntryKind, NoSuchEntry, Vrt, VrtEntry


class ProtocolViolation(Exception):
    """Reported as a diagnostic; never raised out of the monitor."""


@dataclass
class FrameContext:
    fp_value: int
    frame_size: int
    saved_area_offset: int
    candidates: list[int] = field(default_factory=list)  # sorted
    associated: int | None = None
    finalized: bool = False


class HeapCallKind(enum.Enum):
    MALLOC = "malloc"
    REALLOC = "realloc"
    FREE = "free"


@dataclass(frozen=True)
class PendingHeapCall:
    kind: HeapCallKind
    arg0: int
    arg1: int
    return_pc: int


@dataclass(frozen=True)
class VrtMutation:
    pc: int
    op: str  # PUSH, UPDATE, FLUSH, HEAP+, HEAP-, HEAP~
    base: int
    bound: int
    old_base: int | None = None

    def format(self) -> str:
        line = f"PC={self.pc:#010x} {self.op} base={self.base:#010x} bound={self.bound}"
        if self.old_base is not None:
            line += f" old={self.old_base:#010x}"
        return line


class PrologueMatcher:
    """Incremental recogniser for the frame-setup pattern."""

    def __init__(self) -> None:
        self.status = "start"  # start -> saving -> open | none
        self.frame_size = 0
        self.saves: dict[int, int] = {}

    def feed(self, instr: Instruction) -> str:
        op = instr.op
        if self.status == "start":
            if op is Opcode.ADDIU and instr.rt == SP and instr.rs == SP and instr.imm < 0:
                self.frame_size = -instr.imm
                self.status = "saving"
            else:
                self.status = "none"
        elif self.status == "saving":
            if op is Opcode.SW and instr.rs == SP and 0 <= instr.imm < self.frame_size:
                self.saves[instr.rt] = instr.imm
            elif _is_fp_copy(instr):
                self.status = "open"
            else:
                self.status = "none"
        return self.status

    @property
    def saved_area_offset(self) -> int:
        return min(self.saves.values()) if self.saves else self.frame_size


def _is_fp_copy(instr: Instruction) -> bool:
    if instr.op is Opcode.ADDU and instr.rd == FP:
        return {instr.rs, instr.rt} == {0, SP}
    return instr.op is Opcode.ADDIU and instr.rt == FP and instr.rs == SP and instr.imm == 0


def detect_prologue(instrs: list[Instruction], entry_sp: int) -> FrameContext | None:
    """Recognise a prologue at the head of ``instrs``; fp is ``entry_sp - N``."""
    matcher = PrologueMatcher()
    for instr in instrs:
        status = matcher.feed(instr)
        if status == "open":
            return FrameContext(entry_sp - matcher.frame_size, matcher.frame_size,
                                matcher.saved_area_offset)
        if status == "none":
            return None
    return None


def harvest_candidate(frame: FrameContext, instr: Instruction) -> int | None:
    if instr.op in MEMORY_OPS or instr.op is Opcode.ADDIU:
        if instr.rs != FP or (instr.op is Opcode.ADDIU and instr.rt in (0, SP, FP)):
            return None
        offset = instr.imm
        if 0 <= offset < frame.saved_area_offset and offset not in frame.candidates:
            return offset
    return None


def finalize_frame(frame: FrameContext) -> list[tuple[int, int]]:
    """(base, bound) for every candidate, bounds by adjacent-offset subtraction."""
    offsets = sorted(set(frame.candidates))
    limits = offsets[1:] + [frame.saved_area_offset]
    return [(frame.fp_value + off, nxt - off) for off, nxt in zip(offsets, limits)]


@dataclass
class CallRecord:
    entry_pc: int | None
    return_pc: int | None
    matcher: PrologueMatcher | None = field(default_factory=PrologueMatcher)
    frame: FrameContext | None = None
    expected_pc: int | None = None


class Monitor:
    def __init__(self, vrt: Vrt | None = None, entry_pc: int | None = None):
        self.vrt = vrt if vrt is not None else Vrt()
        self.calls: list[CallRecord] = [CallRecord(entry_pc, None, expected_pc=entry_pc)]
        self.pending: PendingHeapCall | None = None
        self.mutations: list[VrtMutation] = []
        self.diagnostics: list[str] = []
        self.listeners: list = []
        self._last_step = -1

    # -- queries used by the detector -------------------------------------

    def current_frame(self) -> FrameContext | None:
        return self.calls[-1].frame if self.calls else None

    def frame_for_fp(self, fp_value: int) -> FrameContext | None:
        frame = self.current_frame()
        return frame if frame is not None and frame.fp_value == fp_value else None

    def frame_entries(self, frame: FrameContext) -> list[VrtEntry]:
        found = (self.vrt.find(frame.fp_value + off, EntryKind.STACK) for off in frame.candidates)
        return [e for e in found if e is not None]

    def open_frames(self) -> list[FrameContext]:
        return [rec.frame for rec in self.calls if rec.frame is not None]

    # -- event handling ---------------------------------------------------

    def _emit(self, muts: list[VrtMutation]) -> list[VrtMutation]:
        self.mutations += muts
        for mut in muts:
            for listener in self.listeners:
                listener(mut)
        return muts

    def _diag(self, pc: int, message: str) -> None:
        self.diagnostics.append(f"PC={pc:#010x} {message}")

    def on_event(self, event: ExecEvent, state: MachineState) -> list[VrtMutation]:
        muts: list[VrtMutation] = []
        if state.instr_count != self._last_step:
            self._last_step = state.instr_count
            self._on_instruction(event.pc, event.instr, state)
        kind = event.kind
        if kind is EventKind.EFFECTIVE_ADDRESS and event.base_reg == FP:
            muts = self._harvest(event.pc, event.instr, event.base_value)
        elif kind is EventKind.REG_WRITE and event.instr.op is Opcode.ADDIU and event.instr.rs == FP:
            muts = self._harvest(event.pc, event.instr, event.srcs[0][1])
        elif kind is EventKind.CALL:
            if event.intrinsic:
                if self.pending is not None:
                    self._diag(event.pc, "ProtocolViolation: nested heap intrinsic call")
                self.pending = PendingHeapCall(HeapCallKind(event.intrinsic), *event.args, event.value)
            else:
                self.calls.append(CallRecord(event.addr, event.value, expected_pc=event.addr))
        elif kind is EventKind.RETURN:
            if event.intrinsic:
                if self.pending is None or self.pending.return_pc != event.addr:
                    self._diag(event.pc, "ProtocolViolation: intrinsic return without pending call")
                else:
                    muts = self.on_heap_return(self.pending, state.regs[2], event.pc)
            else:
                muts = self.on_return(state, event.pc, event.addr)
        return self._emit(muts)

    def _on_instruction(self, pc: int, instr: Instruction, state: MachineState) -> None:
        if not self.calls:
            return
        rec = self.calls[-1]
        if rec.matcher is None:
            return
        if rec.expected_pc is not None and pc != rec.expected_pc:
            rec.matcher = None  # control left the straight-line prologue
            return
        rec.expected_pc = pc + 8
        status = rec.matcher.feed(instr)
        if status == "open":
            m = rec.matcher
            rec.frame = FrameContext(state.regs[FP], m.frame_size, m.saved_area_offset)
            rec.matcher = None
        elif status == "none":
            rec.matcher = None

    def _harvest(self, pc: int, instr: Instruction, fp_value: int) -> list[VrtMutation]:
        frame = self.frame_for_fp(fp_value)
        if frame is None:
            return []
        offset = harvest_candidate(frame, instr)
        if offset is None:
            return []
        return self.add_candidate(frame, offset, pc)

    def add_candidate(self, frame: FrameContext, offset: int, pc: int = 0) -> list[VrtMutation]:
        """Record a new variable start; fixes the bound of the one below it."""
        if frame.associated is None:
            top = self.vrt.top_stack_bit()
            frame.associated = 0 if top is None else 1 - top
        cands = frame.candidates
        i = bisect.bisect_left(cands, offset)
        cands.insert(i, offset)
        muts = []
        fp = frame.fp_value
        if i > 0:
            prev = cands[i - 1]
            self.vrt.update_bound(fp + prev, offset - prev)
            muts.append(VrtMutation(pc, "UPDATE", fp + prev, offset - prev))
        limit = cands[i + 1] if i + 1 < len(cands) else frame.saved_area_offset
        self.vrt.push(VrtEntry(frame.associated, fp + offset, limit - offset, EntryKind.STACK))
        muts.append(VrtMutation(pc, "PUSH", fp + offset, limit - offset))
        return muts

    def on_heap_return(self, pending: PendingHeapCall, ret: int, pc: int = 0) -> list[VrtMutation]:
        self.pending = None
        vrt = self.vrt
        bit = vrt.top_stack_bit() or 0
        kind, arg0, arg1 = pending.kind, pending.arg0, pending.arg1
        try:
            if kind is HeapCallKind.MALLOC or (kind is HeapCallKind.REALLOC and arg0 == 0):
                size = arg0 if kind is HeapCallKind.MALLOC else arg1
                if ret == 0:
                    return []
                vrt.push(VrtEntry(bit, ret, size, EntryKind.HEAP))
                return [VrtMutation(pc, "HEAP+", ret, size)]
            if kind is HeapCallKind.REALLOC:
                if ret == 0:
                    old = vrt.delete_heap(arg0)
                    return [VrtMutation(pc, "HEAP-", old.base, old.bound)]
                vrt.replace_heap(arg0, ret, arg1)
                return [VrtMutation(pc, "HEAP~", ret, arg1, old_base=arg0)]
            if arg0 == 0:
                return []
            old = vrt.delete_heap(arg0)
            return [VrtMutation(pc, "HEAP-", old.base, old.bound)]
        except NoSuchEntry as exc:
            self._diag(pc, f"{kind.value}: {exc}")
            return []

    def on_return(self, state: MachineState, pc: int = 0, target: int | None = None) -> list[VrtMutation]:
        if not self.calls:
            self._diag(pc, "ProtocolViolation: return with no open call")
            return []
        rec = self.calls.pop()
        if rec.return_pc is not None and target is not None and target != rec.return_pc:
            self._diag(pc, f"return to {target:#010x}, expected {rec.return_pc:#010x}")
        frame = rec.frame
        if frame is None or not frame.candidates:
            return []
        removed = self.vrt.pop_function()
        frame.finalized = True
        return [VrtMutation(pc, "FLUSH", e.base, e.bound) for e in removed]
