"""Micro-corpus of overflow programs in four classes per pattern.

Class semantics, measured against the victim variable's bound:

    ok      touches exactly the last legal byte
    min     first out-of-bounds byte touched is bound + 0 (overrun of 1 byte)
    medium  overrun reaches 8 bytes past the bound
    large   overrun well past the bound (HeapStrcpy copies 1200 bytes into 1024)

Every overflow is arranged to land in data (other variables, padding, the
data segment) and never in a saved return address, so the program still
runs to completion and monitored/unmonitored instruction counts compare.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .assembler import assemble
from .runner import EXIT_CLEAN, EXIT_VIOLATION, simulate

CLASSES = ("ok", "min", "medium", "large")


class Pattern(enum.Enum):
    CONSTANT_INDEX_STACK = "ConstantIndexStack"
    LOOP_POINTER_STACK = "LoopPointerStack"
    HEAP_STRCPY = "HeapStrcpy"
    REALLOC_GROW_SHRINK = "ReallocGrowShrink"
    NESTED_FRAMES = "NestedFrames"


@dataclass(frozen=True)
class CorpusCase:
    pattern: Pattern
    cls: str
    source: str
    expected: str  # "clean" | "violation"
    kind: str | None = None

    @property
    def name(self) -> str:
        return f"{self.pattern.value}/{self.cls}"

    @property
    def path(self) -> str:
        return f"{self.pattern.value}/{self.cls}.s"


def prologue(frame: int, saved: int) -> str:
    return (f"    addiu $sp,$sp,-{frame}\n"
            f"    sw $ra,{saved + 4}($sp)\n"
            f"    sw $fp,{saved}($sp)\n"
            f"    addu $fp,$zero,$sp\n")


def epilogue(frame: int, saved: int) -> str:
    return (f"    addu $sp,$zero,$fp\n"
            f"    lw $ra,{saved + 4}($sp)\n"
            f"    lw $fp,{saved}($sp)\n"
            f"    addiu $sp,$sp,{frame}\n"
            f"    jr $ra\n")


# int a[6] is the top variable of the frame: a constant index past it lands
# in the saved-register area or the caller's stack, never in another local.
_CONST_ACCESS = {
    "ok": "lw $5,44($fp)      # a[5]",
    "min": "lb $5,48($fp)      # first byte past a[5]",
    "medium": "lw $5,52($fp)      # a[7], ends 8 bytes past the bound",
    "large": "lw $5,144($fp)     # a[30]",
}


def constant_index_stack(cls: str) -> str:
    return f"""# int *ptr; int i; int a[6];  then a constant-index read
main:
{prologue(56, 48)}    sw $zero,16($fp)      # ptr
    sw $zero,20($fp)      # i
    addiu $2,$fp,24       # &a[0]
    addiu $3,$zero,6
    addiu $4,$zero,13
fill:
    sw $4,0($2)
    addiu $2,$2,4
    addiu $4,$4,1
    addiu $3,$3,-1
    bne $3,$zero,fill
    {_CONST_ACCESS[cls]}
{epilogue(56, 48)}"""


_LOOP_COUNT = {"ok": 8, "min": 9, "medium": 16, "large": 40}


def loop_pointer_stack(cls: str) -> str:
    n = _LOOP_COUNT[cls]
    return f"""# char *ptr; int i; char X[8]; int pad[12];
# for (i = 0; i < {n}; i++) *ptr++ = 'X';
main:
{prologue(88, 80)}    sw $zero,20($fp)      # i = 0
    addiu $2,$fp,32       # &pad
    addiu $2,$fp,24       # ptr = X
    sw $2,16($fp)
loop:
    lw $2,16($fp)
    addiu $3,$zero,88
    sb $3,0($2)
    addiu $2,$2,1
    sw $2,16($fp)
    lw $3,20($fp)
    addiu $3,$3,1
    sw $3,20($fp)
    slti $4,$3,{n}
    bne $4,$zero,loop
{epilogue(88, 80)}"""


# bytes copied including the terminator
_STRCPY_BYTES = {"ok": 1024, "min": 1025, "medium": 1032, "large": 1200}


def heap_strcpy(cls: str) -> str:
    n = _STRCPY_BYTES[cls] - 1
    return f"""# char *p, *q; p = malloc(1024); strcpy(p, src) with strlen(src) = {n}
.intrinsic malloc
main:
{prologue(32, 24)}    sw $zero,20($fp)      # q
    addiu $4,$zero,1024
    jal malloc
    sw $2,16($fp)         # p
    lui $8,0x1000         # src lives in the data segment
    addiu $9,$zero,{n}
    addiu $10,$zero,65
    addu $11,$zero,$8
fill:
    sb $10,0($11)
    addiu $11,$11,1
    addiu $9,$9,-1
    bne $9,$zero,fill
    sb $zero,0($11)
    lw $4,16($fp)
    addu $5,$zero,$8
    jal strcpy
{epilogue(32, 24)}
strcpy:                   # leaf, no frame
    lb $2,0($5)
    sb $2,0($4)
    addiu $4,$4,1
    addiu $5,$5,1
    bne $2,$zero,strcpy
    jr $ra
"""


_REALLOC_INDEX = {"ok": 15, "min": 16, "medium": 23, "large": 80}


def realloc_grow_shrink(cls: str) -> str:
    k = _REALLOC_INDEX[cls]
    return f"""# p = malloc(8); p = realloc(p, 32); p = realloc(p, 16); read p[{k}]; free(p)
.intrinsic malloc
.intrinsic realloc
.intrinsic free
main:
{prologue(32, 24)}    sw $zero,20($fp)      # i
    addiu $4,$zero,8
    jal malloc
    sw $2,16($fp)         # p
    addiu $3,$zero,1
    addu $6,$zero,$2
    addiu $7,$zero,8
fill:
    sb $3,0($6)
    addiu $3,$3,1
    addiu $6,$6,1
    addiu $7,$7,-1
    bne $7,$zero,fill
    lw $4,16($fp)
    addiu $5,$zero,32
    jal realloc
    sw $2,16($fp)
    lw $4,16($fp)
    addiu $5,$zero,16
    jal realloc
    sw $2,16($fp)
    lw $2,16($fp)
    lb $3,{k}($2)
    lw $4,16($fp)
    jal free
{epilogue(32, 24)}"""


def nested_frames(cls: str) -> str:
    n = _LOOP_COUNT[cls]
    return f"""# main -> f -> g: f owns char buf[8] and int big[12]; g(buf, {n}) fills buf
main:
{prologue(32, 24)}    sw $zero,16($fp)
    sw $zero,20($fp)
    jal f
    sw $2,16($fp)
{epilogue(32, 24)}
f:
{prologue(80, 72)}    addiu $2,$fp,24       # big
    sw $zero,0($2)
    addiu $4,$fp,16       # buf
    addiu $5,$zero,{n}
    jal g
    addiu $2,$zero,0
{epilogue(80, 72)}
g:
{prologue(32, 24)}    sw $zero,16($fp)      # i
    sw $5,20($fp)         # n
    addiu $3,$zero,90
gloop:
    sb $3,0($4)
    addiu $4,$4,1
    addiu $5,$5,-1
    bne $5,$zero,gloop
{epilogue(32, 24)}"""


_GENERATORS = {
    Pattern.CONSTANT_INDEX_STACK: (constant_index_stack, "ConstantIndex"),
    Pattern.LOOP_POINTER_STACK: (loop_pointer_stack, "PointerArith"),
    Pattern.HEAP_STRCPY: (heap_strcpy, "HeapOverflow"),
    Pattern.REALLOC_GROW_SHRINK: (realloc_grow_shrink, "HeapOverflow"),
    Pattern.NESTED_FRAMES: (nested_frames, "PointerArith"),
}


def corpus_cases() -> list[CorpusCase]:
    cases = []
    for pattern, (gen, kind) in _GENERATORS.items():
        for cls in CLASSES:
            if cls == "ok":
                cases.append(CorpusCase(pattern, cls, gen(cls), "clean"))
            else:
                cases.append(CorpusCase(pattern, cls, gen(cls), "violation", kind))
    return cases


def dma_program(mallocs: int, frees: int = 0, reallocs: int = 0, size: int = 16) -> str:
    """Straight-line malloc/realloc/free calls; the first ``frees`` blocks are
    freed right away, the rest stay live.  main has no stack variables."""
    if frees > mallocs or reallocs > mallocs:
        raise ValueError("cannot free or realloc more blocks than were allocated")
    lines = [".intrinsic malloc", ".intrinsic realloc", ".intrinsic free", "main:", prologue(8, 0).rstrip()]
    for i in range(mallocs):
        lines += [f"    addiu $4,$zero,{size}", "    jal malloc"]
        if i < reallocs:
            lines += ["    addu $4,$zero,$2", f"    addiu $5,$zero,{2 * size}", "    jal realloc"]
        if i < frees:
            lines += ["    addu $4,$zero,$2", "    jal free"]
    lines.append(epilogue(8, 0).rstrip())
    return "\n".join(lines) + "\n"


def manifest_entry(case: CorpusCase) -> dict:
    return {"name": case.name, "path": case.path, "pattern": case.pattern.value,
            "class": case.cls, "expected": case.expected, "kind": case.kind}


def generate_corpus(output_dir: str | Path) -> Path:
    out = Path(output_dir)
    cases = corpus_cases()
    for case in cases:
        path = out / case.path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(case.source)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"cases": [manifest_entry(c) for c in cases]}, indent=2) + "\n")
    return manifest


@dataclass
class CaseResult:
    name: str
    cls: str
    expected: str
    expected_kind: str | None
    outcome: str  # clean | violation | fault
    kinds: tuple[str, ...]
    instr_count: int
    instr_count_unmonitored: int

    @property
    def matched(self) -> bool:
        if self.outcome != self.expected:
            return False
        return self.expected != "violation" or self.kinds == (self.expected_kind,)


def run_case(source: str, name: str = "", cls: str = "", expected: str = "clean",
             kind: str | None = None, max_steps: int = 1_000_000) -> CaseResult:
    image = assemble(source)
    sim = simulate(image, max_steps=max_steps)
    bare = simulate(image, monitoring=False, max_steps=max_steps)
    code = sim.exit_code
    outcome = {EXIT_CLEAN: "clean", EXIT_VIOLATION: "violation"}.get(code, "fault")
    kinds = tuple(sorted({r.kind.value for r in sim.violations}))
    return CaseResult(name, cls, expected, kind, outcome, kinds,
                      sim.state.instr_count, bare.state.instr_count)


@dataclass
class CorpusCheck:
    results: list[CaseResult]

    @property
    def mismatches(self) -> list[CaseResult]:
        return [r for r in self.results if not r.matched]

    def rows(self) -> list[tuple[str, int, float, str]]:
        rows = []
        for cls in CLASSES:
            group = [r for r in self.results if r.cls == cls]
            if not group:
                continue
            avg = sum(r.instr_count for r in group) / len(group)
            rows.append((cls, len(group), avg, "Yes" if all(r.matched for r in group) else "No"))
        return rows

    def table(self) -> str:
        lines = [f"{'class':<8} {'cases':>5} {'instr count (avg)':>18} {'as expected?':>13}"]
        for cls, n, avg, ok in self.rows():
            lines.append(f"{cls:<8} {n:>5} {avg:>18.1f} {ok:>13}")
        for r in self.mismatches:
            want = r.expected + (f"({r.expected_kind})" if r.expected_kind else "")
            got = r.outcome + (f"({','.join(r.kinds)})" if r.kinds else "")
            lines.append(f"MISMATCH {r.name}: expected {want}, got {got}")
        overhead = [r.name for r in self.results if r.instr_count != r.instr_count_unmonitored]
        for name in overhead:
            lines.append(f"OVERHEAD {name}: monitored and unmonitored instruction counts differ")
        return "\n".join(lines)


def check_corpus(corpus_dir: str | Path) -> CorpusCheck:
    root = Path(corpus_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"missing manifest: {manifest}")
    results = []
    for entry in json.loads(manifest.read_text())["cases"]:
        source = (root / entry["path"]).read_text()
        results.append(run_case(source, entry["name"], entry["class"], entry["expected"], entry.get("kind")))
    return CorpusCheck(results)
