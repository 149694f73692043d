"""Overflow checks against the VRT.

Two kinds of check run on the event stream:

* every load/store into the stack or heap is checked against the entry its
  base register points into (its *provenance*); accesses relative to the
  frame pointer are attributed to the nearest variable at or below the
  effective address in the current frame;
* every ``addu``/``addiu`` whose operand carries provenance is checked to stay
  within ``[base, base + bound]`` of that entry (one-past-the-end allowed).

Provenance follows pointers through registers and through aligned word
stores/loads, so a pointer that walks off the end of one variable into the
next one is still judged against the variable it started from.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

from .isa import FP, SP, WORD_MASK, Opcode
from .machine import LAYOUT, EventKind, ExecEvent, MachineState, MemoryLayout
from .vrt import EntryKind, Vrt, VrtEntry


class ViolationKind(enum.Enum):
    CONSTANT_INDEX = "ConstantIndex"
    POINTER_ARITH = "PointerArith"
    HEAP_OVERFLOW = "HeapOverflow"
    USE_AFTER_FREE = "UseAfterFree"


class Severity(enum.Enum):
    WARNING = "Warning"
    VIOLATION = "Violation"


class ArithAction(enum.Enum):
    WARN = "warn"
    VIOLATE = "violate"
    IGNORE = "ignore"


@dataclass(frozen=True)
class DetectionPolicy:
    arith_action: ArithAction = ArithAction.WARN
    halt_on_violation: bool = False

    @property
    def deref_action(self) -> str:
        return "violate"


@dataclass(frozen=True)
class ViolationReport:
    pc: int
    kind: ViolationKind
    addr: int
    entry: VrtEntry | None
    severity: Severity = Severity.VIOLATION
    instr_index: int = -1

    def as_dict(self) -> dict:
        return {
            "pc": self.pc,
            "kind": self.kind.value,
            "addr": self.addr,
            "entry": self.entry.as_dict() if self.entry is not None else None,
            "severity": self.severity.value,
            "instr_index": self.instr_index,
        }


class _Stale:
    """Provenance whose heap entry has been deleted (freed or reallocated)."""

    def __repr__(self) -> str:
        return "STALE"


STALE = _Stale()
_LOOKUP = object()


class Tag(NamedTuple):
    base: int
    kind: EntryKind


def _first_bad_byte(addr: int, width: int, entry: VrtEntry | None) -> int:
    if entry is None or addr < entry.base:
        return addr
    return max(addr, entry.end)


def check_access(vrt: Vrt, pc: int, base_value: int, offset: int, width: int, *,
                 base_reg: int | None = None, frame_entries=None, provenance=_LOOKUP,
                 heap=None, layout: MemoryLayout = LAYOUT) -> ViolationReport | None:
    """Judge one access of ``width`` bytes at ``base_value + offset``.

    ``base_reg == 30`` selects the constant-index rule over ``frame_entries``
    (default: the top function run).  Otherwise the entry is ``provenance``
    if given, else the entry containing ``base_value``, else the entry
    containing the address itself.  ``heap`` supplies dead blocks for
    use-after-free classification.
    """
    addr = (base_value + offset) & WORD_MASK
    if not layout.is_managed(addr):
        return None

    if base_reg == FP:
        entries = vrt.current_run() if frame_entries is None else frame_entries
        below = [e for e in entries if base_value <= e.base <= addr]
        owner = max(below, key=lambda e: e.base) if below else None
        if owner is not None and addr + width <= owner.end:
            return None
        return ViolationReport(pc, ViolationKind.CONSTANT_INDEX, _first_bad_byte(addr, width, owner), owner)

    def dead(a: int):
        return heap.dead_block_containing(a) if heap is not None else None

    if provenance is _LOOKUP:
        provenance = None if base_reg in (SP, FP) else vrt.find_containing(base_value)
    if provenance is STALE:
        kind = ViolationKind.USE_AFTER_FREE if dead(addr) else ViolationKind.HEAP_OVERFLOW
        return ViolationReport(pc, kind, addr, None)
    if provenance is None:
        owner = vrt.find_containing(addr)
        if owner is None:
            if dead(addr):
                return ViolationReport(pc, ViolationKind.USE_AFTER_FREE, addr, None)
            if addr in layout.heap:
                return ViolationReport(pc, ViolationKind.HEAP_OVERFLOW, addr, None)
            return None  # stack bytes no variable claims: saved registers, arguments
        provenance = owner

    entry = provenance
    if entry.base <= addr and addr + width <= entry.end:
        return None
    if dead(addr) and vrt.find_containing(addr) is None:
        return ViolationReport(pc, ViolationKind.USE_AFTER_FREE, addr, entry)
    kind = ViolationKind.HEAP_OVERFLOW if entry.kind is EntryKind.HEAP else ViolationKind.POINTER_ARITH
    return ViolationReport(pc, kind, _first_bad_byte(addr, width, entry), entry)


def check_arith(vrt: Vrt, pc: int, src_values, result: int, *, provenance=_LOOKUP,
                action: ArithAction = ArithAction.WARN) -> ViolationReport | None:
    """Pointer step check: ``result`` must stay in ``[E.base, E.base + E.bound]``
    where E is the entry of the first source operand that points into one."""
    if provenance is _LOOKUP:
        provenance = next((e for e in map(vrt.find_containing, src_values) if e is not None), None)
    if provenance is None or provenance is STALE or action is ArithAction.IGNORE:
        return None
    entry = provenance
    if entry.base <= result <= entry.end:
        return None
    severity = Severity.VIOLATION if action is ArithAction.VIOLATE else Severity.WARNING
    return ViolationReport(pc, ViolationKind.POINTER_ARITH, result, entry, severity)


def summarize(reports: list[ViolationReport]) -> dict:
    by_kind = Counter(r.kind.value for r in reports)
    by_severity = Counter(r.severity.value for r in reports)
    return {
        "total": len(reports),
        "by_kind": {k.value: by_kind.get(k.value, 0) for k in ViolationKind},
        "by_severity": {s.value: by_severity.get(s.value, 0) for s in Severity},
    }


def report_sink(reports: list[ViolationReport]) -> tuple[list[ViolationReport], dict]:
    ordered = sorted(reports, key=lambda r: r.instr_index)
    return ordered, summarize(ordered)


class Detector:
    """Synchronous observer; never writes machine state except ``halted``."""

    def __init__(self, vrt: Vrt, monitor=None, policy: DetectionPolicy = DetectionPolicy(),
                 layout: MemoryLayout = LAYOUT):
        self.vrt = vrt
        self.monitor = monitor
        self.policy = policy
        self.layout = layout
        self.reports: list[ViolationReport] = []
        self.diagnostics: list[str] = []
        self.reg_tags: dict[int, Tag] = {}
        self.mem_tags: dict[int, tuple[Tag, int]] = {}
        self._ea: ExecEvent | None = None

    @property
    def violations(self) -> list[ViolationReport]:
        return [r for r in self.reports if r.severity is Severity.VIOLATION]

    def _resolve(self, reg: int, value: int):
        """(tag, entry) for a source register; entry may be STALE."""
        if reg in (0, SP, FP):
            return None, None
        tag = self.reg_tags.get(reg)
        if tag is not None:
            entry = self.vrt.find(tag.base, tag.kind)
            if entry is not None:
                return tag, entry
            if tag.kind is EntryKind.HEAP:
                return tag, STALE
        entry = self.vrt.find_containing(value)
        return (Tag(entry.base, entry.kind), entry) if entry is not None else (None, None)

    def _record(self, report: ViolationReport | None, state: MachineState) -> None:
        if report is None:
            return
        report = ViolationReport(report.pc, report.kind, report.addr, report.entry,
                                 report.severity, state.instr_count - 1)
        self.reports.append(report)
        if report.severity is Severity.VIOLATION and self.policy.halt_on_violation:
            state.halted = True
            state.halt_reason = "violation"

    def on_event(self, ev: ExecEvent, state: MachineState) -> None:
        kind = ev.kind
        if kind is EventKind.EFFECTIVE_ADDRESS:
            self._ea = ev
            self._record(self._check_access(ev, state), state)
        elif kind is EventKind.MEM_WRITE:
            word = ev.addr & ~3
            tag = self.reg_tags.get(ev.reg) if ev.instr.op is Opcode.SW else None
            if tag is not None:
                self.mem_tags[word] = (tag, ev.value)
            else:
                self.mem_tags.pop(word, None)
        elif kind is EventKind.REG_WRITE:
            self._on_reg_write(ev, state)

    def _check_access(self, ev: ExecEvent, state: MachineState) -> ViolationReport | None:
        if not self.layout.is_managed(ev.addr):
            return None
        if ev.base_reg == FP and self.monitor is not None:
            frame = self.monitor.frame_for_fp(ev.base_value)
            if frame is not None:
                return check_access(self.vrt, ev.pc, ev.base_value, ev.offset, ev.width, base_reg=FP,
                                    frame_entries=self.monitor.frame_entries(frame), layout=self.layout)
        _, entry = self._resolve(ev.base_reg, ev.base_value)
        return check_access(self.vrt, ev.pc, ev.base_value, ev.offset, ev.width,
                            provenance=entry, heap=state.heap, layout=self.layout)

    def _on_reg_write(self, ev: ExecEvent, state: MachineState) -> None:
        op, reg = ev.instr.op, ev.reg
        tag = None
        if op in (Opcode.ADDU, Opcode.ADDIU):
            first = None
            for src, value in ev.srcs:
                src_tag, entry = self._resolve(src, value)
                if entry is None:
                    continue
                if first is None:
                    first = (src_tag, entry)
                else:
                    self.diagnostics.append(f"PC={ev.pc:#010x} both operands carry provenance; first wins")
            if first is not None:
                tag, entry = first
                if entry is not STALE:
                    self._record(check_arith(self.vrt, ev.pc, [v for _, v in ev.srcs], ev.value,
                                             provenance=entry, action=self.policy.arith_action), state)
            elif op is Opcode.ADDIU and ev.instr.rs in (SP, FP):
                entry = self.vrt.find_containing(ev.value)
                tag = Tag(entry.base, entry.kind) if entry is not None else None
        elif op is Opcode.LW and self._ea is not None and self._ea.pc == ev.pc:
            stored = self.mem_tags.get(self._ea.addr)
            if stored is not None and stored[1] == ev.value:
                tag = stored[0]
        if tag is None:
            self.reg_tags.pop(reg, None)
        else:
            self.reg_tags[reg] = tag
