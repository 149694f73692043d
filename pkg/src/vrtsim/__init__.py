"""Instruction-set simulator with a Variable Record Table for run-time
buffer-overflow detection."""
from .assembler import ProgramImage, assemble, disassemble_all
from .detector import DetectionPolicy, Detector, ViolationKind, ViolationReport
from .isa import Instruction, Opcode, decode, disassemble, encode
from .machine import MachineState, load, run, step
from .monitor import Monitor
from .runner import simulate
from .vrt import Vrt, VrtEntry, footprint_bits

__all__ = [
    "DetectionPolicy", "Detector", "Instruction", "MachineState", "Monitor", "Opcode",
    "ProgramImage", "ViolationKind", "ViolationReport", "Vrt", "VrtEntry", "assemble",
    "decode", "disassemble", "disassemble_all", "encode", "footprint_bits", "load", "run",
    "simulate", "step",
]
