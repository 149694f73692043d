import pytest

from vrtsim.assembler import assemble
from vrtsim.corpus import corpus_cases
from vrtsim.detector import (
    ArithAction,
    DetectionPolicy,
    STALE,
    Severity,
    ViolationKind,
    ViolationReport,
    check_access,
    check_arith,
    report_sink,
    summarize,
)
from vrtsim.isa import Opcode
from vrtsim.machine import BumpAllocator, EventKind, HEAP_BASE
from vrtsim.runner import simulate
from vrtsim.vrt import EntryKind, Vrt, VrtEntry

FP = 0x7FFFFEC8
PC = 0x400100
CASES = {c.name: c for c in corpus_cases()}


def frame_vrt():
    """int a[6] at fp+16, int *ptr at fp+40, int i at fp+44."""
    vrt = Vrt()
    for off, bound in ((16, 24), (40, 4), (44, 4)):
        vrt.push(VrtEntry(0, FP + off, bound))
    return vrt


# -- check_access ------------------------------------------------------------

def test_constant_index_past_array():
    report = check_access(frame_vrt(), PC, FP, 56, 4, base_reg=30)
    assert report.kind is ViolationKind.CONSTANT_INDEX
    assert report.addr == FP + 56
    assert report.severity is Severity.VIOLATION


def test_constant_index_in_bounds():
    assert check_access(frame_vrt(), PC, FP, 20, 4, base_reg=30) is None
    assert check_access(frame_vrt(), PC, FP, 36, 4, base_reg=30) is None  # a[5]


def test_constant_index_straddling_bound():
    report = check_access(frame_vrt(), PC, FP, 38, 4, base_reg=30)
    assert report.kind is ViolationKind.CONSTANT_INDEX
    assert report.addr == FP + 40  # first byte past a[]
    assert report.entry == VrtEntry(0, FP + 16, 24)


def test_constant_index_below_first_variable():
    report = check_access(frame_vrt(), PC, FP, -4, 4, base_reg=30)
    assert report.kind is ViolationKind.CONSTANT_INDEX and report.entry is None


def test_heap_store_one_past_end():
    vrt = Vrt()
    vrt.push(VrtEntry(0, HEAP_BASE, 1024, EntryKind.HEAP))
    report = check_access(vrt, PC, HEAP_BASE, 1024, 4)
    assert report.kind is ViolationKind.HEAP_OVERFLOW
    assert report.addr == HEAP_BASE + 1024
    assert check_access(vrt, PC, HEAP_BASE, 1020, 4) is None


def test_heap_access_straddling_end_reports_first_bad_byte():
    vrt = Vrt()
    vrt.push(VrtEntry(0, HEAP_BASE, 6, EntryKind.HEAP))
    report = check_access(vrt, PC, HEAP_BASE, 4, 4)
    assert report.addr == HEAP_BASE + 6


def test_load_from_freed_block():
    heap = BumpAllocator()
    block = heap.malloc(32)
    heap.free(block)
    report = check_access(Vrt(), PC, block, 8, 4, heap=heap)
    assert report.kind is ViolationKind.USE_AFTER_FREE
    assert heap.dead_block_containing(report.addr).base == block


def test_stale_provenance_outside_dead_block_is_overflow():
    heap = BumpAllocator()
    heap.free(heap.malloc(8))
    report = check_access(Vrt(), PC, HEAP_BASE, 64, 4, provenance=STALE, heap=heap)
    assert report.kind is ViolationKind.HEAP_OVERFLOW


def test_pointer_provenance_beats_containing_entry():
    vrt = frame_vrt()
    ptr_entry = vrt.find_containing(FP + 16)
    # a pointer into a[] that reaches ptr's slot is still an overflow of a[]
    report = check_access(vrt, PC, FP + 36, 4, 4, provenance=ptr_entry)
    assert report.kind is ViolationKind.POINTER_ARITH
    assert report.entry == ptr_entry


def test_unmanaged_addresses_are_never_checked():
    assert check_access(Vrt(), PC, 0x10000000, 4, 4) is None
    assert check_access(Vrt(), PC, 0x00400000, 0, 4) is None


def test_unclaimed_stack_bytes_are_not_reported():
    assert check_access(frame_vrt(), PC, FP + 48, 0, 4) is None  # saved $30


def test_check_access_is_pure():
    vrt = frame_vrt()
    before = list(vrt.entries)
    check_access(vrt, PC, FP, 56, 4, base_reg=30)
    check_access(vrt, PC, FP + 16, 100, 1)
    assert vrt.entries == before


# -- check_arith -------------------------------------------------------------

def char_array():
    vrt = Vrt()
    vrt.push(VrtEntry(0, FP + 24, 6))
    return vrt


def test_one_past_end_is_allowed():
    x = FP + 24
    assert check_arith(char_array(), PC, [x + 5, 1], x + 6) is None


def test_two_past_end_is_reported():
    x = FP + 24
    report = check_arith(char_array(), PC, [x + 6, 1], x + 7)
    assert report is None  # x+6 lies outside the entry, so it carries no provenance
    entry = char_array().entries[0]
    report = check_arith(char_array(), PC, [x + 6, 1], x + 7, provenance=entry)
    assert report.kind is ViolationKind.POINTER_ARITH
    assert report.severity is Severity.WARNING
    assert report.addr == x + 7


def test_arith_policy():
    entry = char_array().entries[0]
    args = (char_array(), PC, [FP + 24, 10], FP + 34)
    assert check_arith(*args, provenance=entry, action=ArithAction.VIOLATE).severity is Severity.VIOLATION
    assert check_arith(*args, provenance=entry, action=ArithAction.IGNORE) is None


def test_small_integers_have_no_provenance():
    assert check_arith(char_array(), PC, [3, 4], 7) is None


def test_in_bounds_stepping_never_reports():
    vrt = char_array()
    x = FP + 24
    for start in range(6):
        for step in range(0, 7 - start):
            assert check_arith(vrt, PC, [x + start, step], x + start + step) is None


# -- reports -----------------------------------------------------------------

def test_report_sink_clean():
    reports, summary = report_sink([])
    assert reports == []
    assert summary["total"] == 0
    assert set(summary["by_kind"].values()) == {0}


def test_report_sink_orders_by_instruction():
    late = ViolationReport(1, ViolationKind.HEAP_OVERFLOW, 2, None, instr_index=9)
    early = ViolationReport(1, ViolationKind.CONSTANT_INDEX, 2, None, instr_index=3)
    reports, summary = report_sink([late, early])
    assert reports == [early, late]
    assert summary["by_kind"]["HeapOverflow"] == summary["by_kind"]["ConstantIndex"] == 1


def test_strcpy_overflow_first_report_at_byte_1025():
    image = assemble(CASES["HeapStrcpy/large"].source)
    sim = simulate(image, record=True)
    first = report_sink(sim.violations)[0][0]
    assert first.kind is ViolationKind.HEAP_OVERFLOW
    assert first.entry.base == HEAP_BASE and first.entry.bound == 1024
    # count the copy loop's byte stores into the heap
    stores = [e for e in sim.result.events if e.kind is EventKind.MEM_WRITE
              and e.instr.op is Opcode.SB and e.addr >= HEAP_BASE]
    assert len(stores) == 1200
    ordinal = next(i for i, e in enumerate(stores, 1) if e.addr == first.addr)
    assert ordinal == 1025
    assert first.pc == stores[1024].pc


def test_halt_on_first_violation():
    image = assemble(CASES["HeapStrcpy/large"].source)
    free_run = simulate(image)
    assert len(free_run.violations) > 1
    halted = simulate(image, policy=DetectionPolicy(halt_on_violation=True))
    assert len(halted.violations) == 1
    assert halted.state.halt_reason == "violation"


def test_summary_counts_every_kind():
    summary = summarize([ViolationReport(0, ViolationKind.USE_AFTER_FREE, 0, None)])
    assert summary["by_kind"] == {"ConstantIndex": 0, "PointerArith": 0, "HeapOverflow": 0, "UseAfterFree": 1}
    assert summary["by_severity"] == {"Warning": 0, "Violation": 1}


def test_policy_deref_is_always_violate():
    assert DetectionPolicy().deref_action == "violate"
    assert DetectionPolicy(ArithAction.IGNORE).deref_action == "violate"


def test_use_after_free_program():
    src = """
    .intrinsic malloc
    .intrinsic free
    main:
        addu $17,$0,$31
        addiu $4,$0,16
        jal malloc
        addu $16,$0,$2
        addu $4,$0,$16
        jal free
        lw $5,4($16)
        jr $17
    """
    sim = simulate(assemble(src))
    assert [r.kind for r in sim.violations] == [ViolationKind.USE_AFTER_FREE]
    assert sim.violations[0].addr == HEAP_BASE + 4


@pytest.mark.parametrize("name", sorted(CASES))
def test_detector_leaves_machine_untouched(name):
    image = assemble(CASES[name].source)
    on, off = simulate(image), simulate(image, monitoring=False)
    assert on.state.regs == off.state.regs
    assert on.state.pc == off.state.pc
    assert on.state.instr_count == off.state.instr_count
    assert on.state.mem.snapshot() == off.state.mem.snapshot()
