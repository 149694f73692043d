"""The Variable Record Table: an ordered stack of base/bound records.

Entries are kept bottom-to-top in a list; index -1 is the top of the table.
Stack entries belonging to one function activation share an associated bit
that differs from the run beneath them, which is what lets a return flush
exactly that function's entries.  Heap entries are tagged separately and are
never touched by a flush.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterator

ASSOC_BITS = 1
BASE_BITS = 32
BOUND_BITS = 8
ENTRY_BITS = ASSOC_BITS + BASE_BITS + BOUND_BITS  # 41
MAX_BOUND_FIELD = (1 << BOUND_BITS) - 1


class VrtError(Exception):
    pass


class NoSuchEntry(VrtError):
    pass


class EmptyTable(VrtError):
    pass


class EntryKind(enum.Enum):
    STACK = "stack"
    HEAP = "heap"


@dataclass(frozen=True, slots=True)
class VrtEntry:
    associated: int
    base: int
    bound: int
    kind: EntryKind = EntryKind.STACK

    @property
    def end(self) -> int:
        return self.base + self.bound

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.bound

    def dump(self) -> str:
        return f"A={self.associated} BASE=0x{self.base:08X} BOUND={self.bound} KIND={self.kind.value}"

    def as_dict(self) -> dict:
        return {"base": self.base, "bound": self.bound, "kind": self.kind.value}


def footprint_bits(vrt_or_count: "Vrt | int") -> int:
    """Storage for the table at 41 bits per entry (1 associated + 32 base + 8 bound)."""
    count = vrt_or_count if isinstance(vrt_or_count, int) else len(vrt_or_count)
    return ENTRY_BITS * count


class Vrt:
    def __init__(self) -> None:
        self.entries: list[VrtEntry] = []
        self.max_occupancy = 0
        self.diagnostics: list[str] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[VrtEntry]:
        """Top-down."""
        return reversed(self.entries)

    def _note_saturation(self, entry: VrtEntry) -> None:
        if entry.bound > MAX_BOUND_FIELD:
            self.diagnostics.append(
                f"bound-field-saturation: base=0x{entry.base:08X} bound={entry.bound} "
                f"exceeds the {BOUND_BITS}-bit field")

    def push(self, entry: VrtEntry) -> None:
        self.entries.append(entry)
        self.max_occupancy = max(self.max_occupancy, len(self.entries))
        self._note_saturation(entry)

    def top_stack_bit(self) -> int | None:
        for entry in reversed(self.entries):
            if entry.kind is EntryKind.STACK:
                return entry.associated
        return None

    def current_run(self) -> list[VrtEntry]:
        """Stack entries of the topmost function run, top-down."""
        bit = self.top_stack_bit()
        run = []
        for entry in reversed(self.entries):
            if entry.kind is EntryKind.HEAP:
                continue
            if entry.associated != bit:
                break
            run.append(entry)
        return run

    def _index_in_run(self, base: int) -> int:
        bit = self.top_stack_bit()
        for i in range(len(self.entries) - 1, -1, -1):
            entry = self.entries[i]
            if entry.kind is EntryKind.HEAP:
                continue
            if entry.associated != bit:
                break
            if entry.base == base:
                return i
        raise NoSuchEntry(f"no stack entry with base 0x{base:08X} in the current function run")

    def update_bound(self, base: int, bound: int) -> None:
        i = self._index_in_run(base)
        self.entries[i] = replace(self.entries[i], bound=bound)
        self._note_saturation(self.entries[i])

    def find_containing(self, addr: int) -> VrtEntry | None:
        for entry in reversed(self.entries):
            if entry.base <= addr < entry.base + entry.bound:
                return entry
        return None

    def find(self, base: int, kind: EntryKind) -> VrtEntry | None:
        for entry in reversed(self.entries):
            if entry.base == base and entry.kind is kind:
                return entry
        return None

    def pop_function(self) -> list[VrtEntry]:
        """Remove and return the top function run, leaving heap entries in place."""
        bit = self.top_stack_bit()
        if bit is None:
            raise EmptyTable("no stack entries to flush")
        removed, kept_heap = [], []
        while self.entries:
            entry = self.entries[-1]
            if entry.kind is EntryKind.STACK and entry.associated != bit:
                break
            self.entries.pop()
            (removed if entry.kind is EntryKind.STACK else kept_heap).append(entry)
        self.entries.extend(reversed(kept_heap))
        return removed

    def flush_function(self) -> int:
        return len(self.pop_function())

    def _heap_index(self, base: int) -> int:
        for i in range(len(self.entries) - 1, -1, -1):
            entry = self.entries[i]
            if entry.kind is EntryKind.HEAP and entry.base == base:
                return i
        raise NoSuchEntry(f"no heap entry with base 0x{base:08X}")

    def delete_heap(self, base: int) -> VrtEntry:
        return self.entries.pop(self._heap_index(base))

    def replace_heap(self, old_base: int, new_base: int, new_bound: int) -> VrtEntry:
        i = self._heap_index(old_base)
        self.entries[i] = replace(self.entries[i], base=new_base, bound=new_bound)
        self._note_saturation(self.entries[i])
        return self.entries[i]

    def footprint_bits(self) -> int:
        return footprint_bits(len(self.entries))

    def dump(self) -> str:
        return "\n".join(entry.dump() for entry in self)
