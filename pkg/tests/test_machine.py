import pytest
from hypothesis import given, settings, strategies as st

from vrtsim.assembler import assemble
from vrtsim.isa import Instruction, Opcode, encode
from vrtsim.listings import THREE_LOCALS_MAIN
from vrtsim.machine import (
    DEFAULT_STACK_TOP,
    HEAP_BASE,
    SENTINEL_RA,
    BadFree,
    BadRealloc,
    BumpAllocator,
    DoubleFree,
    EventKind,
    IllegalInstruction,
    ImageTooLarge,
    LAYOUT,
    Memory,
    MemoryFault,
    MissingEntry,
    RunStatus,
    UnalignedAccess,
    format_event,
    load,
    run,
    step,
)
from vrtsim.runner import simulate

STACK_FP = 0x7FFFFF48


def machine(src: str, **regs):
    state = load(assemble(src))
    for name, value in regs.items():
        state.regs[int(name[1:])] = value
    return state


def kinds(events):
    return [e.kind for e in events]


# -- load -------------------------------------------------------------------

def test_load_enters_at_main():
    state = load(assemble(THREE_LOCALS_MAIN))
    assert state.pc == 0x4001F0
    assert state.regs[29] == DEFAULT_STACK_TOP
    assert state.regs[31] == SENTINEL_RA
    assert all(r == 0 for i, r in enumerate(state.regs) if i not in (29, 31))


def test_load_empty_image():
    with pytest.raises(MissingEntry):
        load(assemble(".org 0x400000\n"))


def test_load_stack_top():
    assert load(assemble("jr $31\n"), 0x7FFFFF00).regs[29] == 0x7FFFFF00


def test_load_rejects_image_outside_text():
    with pytest.raises(ImageTooLarge):
        load(assemble(".org 0x0ffffff8\nnop: addu $1,$1,$1\naddu $1,$1,$1\n"))


# -- step -------------------------------------------------------------------

def test_fp_copy():
    state = machine("addu $30,$0,$29\n", r29=STACK_FP)
    events = step(state)
    assert state.regs[30] == STACK_FP
    assert kinds(events) == [EventKind.REG_WRITE]
    assert events[0].srcs == ((0, 0), (29, STACK_FP))


def test_store_relative_to_fp():
    state = machine("sw $2,40($30)\n", r30=STACK_FP, r2=0xDEADBEEF)
    events = step(state)
    assert kinds(events) == [EventKind.EFFECTIVE_ADDRESS, EventKind.MEM_WRITE]
    write = events[1]
    assert (write.addr, write.width) == (STACK_FP + 40, 4)
    assert state.mem.read(STACK_FP + 40, 4) == 0xDEADBEEF
    assert (events[0].base_reg, events[0].base_value, events[0].offset) == (30, STACK_FP, 40)


def test_jal_to_intrinsic_malloc():
    state = machine(".org 0x400f70\n.intrinsic malloc\nmain: addiu $4,$0,1024\njal 0x400f98\n"
                    "jr $31\naddu $0,$0,$0\naddu $0,$0,$0\nmalloc: jr $31\n")
    assert state.intrinsics == {0x400F98: "malloc"}
    step(state)
    events = step(state)
    assert kinds(events)[:3] == [EventKind.REG_WRITE, EventKind.CALL, EventKind.INTRINSIC_ALLOC]
    assert events[1].intrinsic == "malloc" and events[1].args == (1024, 0)
    assert kinds(events)[3:] == [EventKind.REG_WRITE, EventKind.RETURN]
    assert state.regs[2] == HEAP_BASE
    assert state.pc == 0x400F80


def test_every_memory_op_emits_one_effective_address_first():
    state = machine("sw $2,0($30)\nsb $2,5($30)\nlw $3,0($30)\nlb $4,5($30)\n", r30=STACK_FP, r2=0x1FF)
    for _ in range(4):
        events = step(state)
        assert events[0].kind is EventKind.EFFECTIVE_ADDRESS
        assert sum(e.kind is EventKind.EFFECTIVE_ADDRESS for e in events) == 1
        assert events[1].kind in (EventKind.MEM_READ, EventKind.MEM_WRITE)
    assert state.regs[3] == 0x1FF
    assert state.regs[4] == 0xFFFFFFFF  # lb sign-extends 0xFF


def test_step_errors():
    with pytest.raises(UnalignedAccess):
        step(machine("lw $2,2($30)\n", r30=STACK_FP))
    with pytest.raises(MemoryFault):
        step(machine("lw $2,0($3)\n", r3=0x90000000))
    with pytest.raises(MemoryFault):
        step(machine("sw $2,0($3)\n", r3=0x00400000))  # text is read-only
    state = machine("jr $3\n", r3=0x00500000)
    step(state)
    with pytest.raises(IllegalInstruction):
        step(state)


def test_arithmetic_semantics():
    src = """
        lui $2,0x8000
        ori $2,$2,0xff
        slt $3,$2,$0
        slti $4,$0,-1
        sll $5,$2,4
        subu $6,$0,$2
        addiu $7,$0,-1
    """
    state = machine(src)
    for _ in range(7):
        step(state)
    r = state.regs
    assert r[2] == 0x800000FF
    assert r[3] == 1 and r[4] == 0
    assert r[5] == 0x00000FF0
    assert r[6] == 0x7FFFFF01
    assert r[7] == 0xFFFFFFFF


def test_register_zero_stays_zero():
    state = machine("addiu $0,$0,5\naddu $0,$29,$29\n")
    assert step(state) == []
    step(state)
    assert state.regs[0] == 0


# -- run --------------------------------------------------------------------

def test_immediate_return_halts():
    state = load(assemble("jr $31\n"))
    result = run(state, 10)
    assert result.status is RunStatus.HALTED
    assert state.instr_count == 1
    assert state.halt_reason == "return"


def test_budget_exhausted():
    state = load(assemble("L: j L\n"))
    result = run(state, 100)
    assert result.status is RunStatus.BUDGET_EXHAUSTED
    assert state.instr_count == 100


def test_fault_status_carries_error():
    state = load(assemble("lw $2,0($0)\n"))
    result = run(state, 10)
    assert result.status is RunStatus.FAULTED
    assert isinstance(result.error, MemoryFault)


def test_halt_instruction():
    state = load(assemble("halt\n"))
    assert run(state, 5).status is RunStatus.HALTED
    assert state.halt_reason == "halt"


def test_three_locals_runs_with_equal_instruction_count():
    image = assemble(THREE_LOCALS_MAIN)
    monitored = simulate(image)
    bare = simulate(image, monitoring=False)
    assert monitored.result.status is RunStatus.HALTED
    assert monitored.state.instr_count == bare.state.instr_count == 26


def test_run_is_deterministic():
    image = assemble(THREE_LOCALS_MAIN)
    traces = [[format_event(e) for e in run(load(image), 1000).events] for _ in range(2)]
    assert traces[0] == traces[1]


def test_trace_line_format():
    state = machine("sw $2,40($30)\n", r30=STACK_FP, r2=7)
    lines = [format_event(e) for e in step(state)]
    assert lines == [
        "PC=0x00400000 EffectiveAddress base=$30 offset=40 addr=0x7fffff70 width=4",
        "PC=0x00400000 MemWrite addr=0x7fffff70 width=4 value=0x7",
    ]


# -- intrinsics -------------------------------------------------------------

def test_first_malloc_is_heap_base():
    heap = BumpAllocator()
    assert heap.next == LAYOUT.heap.start
    assert heap.malloc(1024) == HEAP_BASE == 0x10040000


def test_successive_mallocs_are_eight_apart():
    heap = BumpAllocator()
    a, b = heap.malloc(8), heap.malloc(8)
    assert b - a == 8


def test_malloc_zero_returns_null():
    heap = BumpAllocator()
    assert heap.malloc(0) == 0
    assert heap.blocks == {}


def test_realloc_null_is_malloc():
    a, b = BumpAllocator(), BumpAllocator()
    assert a.realloc(Memory(), 0, 16) == b.malloc(16)


def test_realloc_copies_prefix():
    mem, heap = Memory(), BumpAllocator()
    old = heap.malloc(8)
    payload = bytes(range(1, 9))
    mem.write_bytes(old, payload)
    new = heap.realloc(mem, old, 16)
    assert new != old
    # scalar reference copy
    expected = bytearray(16)
    for i in range(min(8, 16)):
        expected[i] = payload[i]
    assert mem.read_bytes(new, 8) == bytes(expected[:8])
    assert not heap.blocks[old].live and heap.blocks[new].live


def test_realloc_shrink_copies_new_size_only():
    mem, heap = Memory(), BumpAllocator()
    old = heap.malloc(16)
    mem.write_bytes(old, bytes(range(100, 116)))
    new = heap.realloc(mem, old, 4)
    assert mem.read_bytes(new, 4) == bytes(range(100, 104))
    assert heap.malloc(1) == new + 8  # nothing beyond the 4 bytes was claimed


def test_realloc_garbage():
    with pytest.raises(BadRealloc):
        BumpAllocator().realloc(Memory(), 0x10040010, 8)


def test_free_semantics():
    heap = BumpAllocator()
    block = heap.malloc(8)
    heap.free(block)
    assert heap.dead_blocks()[0].base == block
    with pytest.raises(DoubleFree):
        heap.free(block)
    with pytest.raises(BadFree):
        heap.free(block + 4)
    heap.free(0)
    assert heap.calls["free"] == 4


def test_freed_memory_is_still_readable():
    src = """
    .intrinsic malloc
    .intrinsic free
    main:
        addu $17,$0,$31
        addiu $4,$0,8
        jal malloc
        addu $16,$0,$2
        addiu $3,$0,42
        sw $3,0($16)
        addu $4,$0,$16
        jal free
        lw $5,0($16)
        jr $17
    """
    sim = simulate(assemble(src), monitoring=False)
    assert sim.result.status is RunStatus.HALTED
    assert sim.state.regs[5] == 42


# -- properties --------------------------------------------------------------

@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 255), st.sampled_from([1, 4]), st.integers(0, 0xFFFFFFFF)),
                min_size=1, max_size=30))
def test_memory_read_after_write(ops):
    mem = Memory()
    base = 0x7FFFF000
    for slot, width, value in ops:
        addr = base + slot * 4
        value &= (1 << 8 * width) - 1
        mem.write(addr, width, value)
        assert mem.read(addr, width) == value


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(1, 28), st.integers(0, 31), st.integers(-100, 100)), max_size=40))
def test_register_zero_after_every_step(triples):
    src = "".join(f"addiu ${rt},${rs},{imm}\n" for rt, rs, imm in triples) + "addiu $0,$1,1\njr $31\n"
    state = load(assemble(src))
    while not state.halted:
        step(state)
        assert state.regs[0] == 0
        assert state.pc % 8 == 0 or state.halted


@settings(max_examples=30)
@given(st.integers(1, 50))
def test_instr_count_increments_by_one(n):
    state = load(assemble("addiu $2,$0,%d\nL: addiu $2,$2,-1\nbne $2,$0,L\njr $31\n" % n))
    count = 0
    while not state.halted:
        step(state)
        count += 1
        assert state.instr_count == count
    assert count == 2 * n + 2


def test_illegal_word_in_text_faults():
    image = assemble("addu $1,$1,$1\n")
    image.words.append(0)
    state = load(image)
    step(state)
    with pytest.raises(IllegalInstruction):
        step(state)
    assert encode(Instruction(Opcode.HALT)) != 0
