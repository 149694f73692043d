"""Glue: run an image with or without VRT monitoring and summarise the result."""
from __future__ import annotations

from dataclasses import dataclass, field

from .assembler import ProgramImage
from .detector import DetectionPolicy, Detector, Severity, summarize
from .machine import DEFAULT_STACK_TOP, MachineState, RunResult, RunStatus, load, run
from .monitor import Monitor
from .vrt import Vrt, footprint_bits

DEFAULT_MAX_STEPS = 1_000_000

EXIT_CLEAN = 0
EXIT_FAULT = 1
EXIT_VIOLATION = 2


@dataclass
class RunConfig:
    program_path: str | None = None
    max_steps: int = DEFAULT_MAX_STEPS
    policy: DetectionPolicy = field(default_factory=DetectionPolicy)
    monitoring: bool = True
    stack_top: int = DEFAULT_STACK_TOP
    report_json: str | None = None
    vrt_dump: bool = False
    exec_trace: bool = False
    trace_vrt: bool = False
    stats: bool = False


@dataclass
class Simulation:
    state: MachineState
    result: RunResult
    vrt: Vrt | None
    monitor: Monitor | None
    detector: Detector | None

    @property
    def reports(self):
        return self.detector.reports if self.detector is not None else []

    @property
    def violations(self):
        return [r for r in self.reports if r.severity is Severity.VIOLATION]

    @property
    def exit_code(self) -> int:
        if self.violations:
            return EXIT_VIOLATION
        if self.result.status is RunStatus.FAULTED:
            return EXIT_FAULT
        return EXIT_CLEAN

    def report(self) -> dict:
        return {"violations": [r.as_dict() for r in self.reports], "summary": summarize(self.reports)}

    def stats(self) -> dict:
        occupancy = self.vrt.max_occupancy if self.vrt is not None else 0
        calls = self.state.heap.calls
        return {
            "status": self.result.status.value,
            "instr_count": self.state.instr_count,
            "vrt_max_occupancy": occupancy,
            "footprint_bits": footprint_bits(occupancy),
            "dma_calls": {name: calls.get(name, 0) for name in ("malloc", "realloc", "free")},
            "violations": summarize(self.violations)["by_kind"],
            "warnings": len(self.reports) - len(self.violations),
        }


def simulate(image: ProgramImage, *, monitoring: bool = True,
             policy: DetectionPolicy | None = None, max_steps: int = DEFAULT_MAX_STEPS,
             stack_top: int = DEFAULT_STACK_TOP, record: bool = False,
             vrt_listener=None) -> Simulation:
    state = load(image, stack_top)
    vrt = monitor = detector = None
    observers = []
    if monitoring:
        vrt = Vrt()
        monitor = Monitor(vrt, entry_pc=state.pc)
        if vrt_listener is not None:
            monitor.listeners.append(vrt_listener)
        detector = Detector(vrt, monitor, policy or DetectionPolicy())
        observers = [monitor, detector]
    result = run(state, max_steps, observers, record=record)
    return Simulation(state, result, vrt, monitor, detector)
