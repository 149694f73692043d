"""Run the three-locals main and print the VRT as it stands at the end of the body."""
import argparse

from vrtsim.assembler import assemble
from vrtsim.detector import Detector
from vrtsim.listings import THREE_LOCALS_BODY_END, THREE_LOCALS_MAIN
from vrtsim.machine import load, step
from vrtsim.monitor import Monitor
from vrtsim.vrt import Vrt


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trace-vrt", action="store_true", help="also print every VRT mutation")
    args = parser.parse_args()

    image = assemble(THREE_LOCALS_MAIN)
    state = load(image)
    vrt = Vrt()
    monitor = Monitor(vrt, entry_pc=state.pc)
    detector = Detector(vrt, monitor)
    while not state.halted:
        for ev in step(state):
            monitor.on_event(ev, state)
            detector.on_event(ev, state)
        if state.pc == THREE_LOCALS_BODY_END:
            fp = state.regs[30]
            print(f"fp=0x{fp:08X}")
            for entry in vrt.entries:
                print(f"  fp+{entry.base - fp:<3} bound={entry.bound:<3} {entry.kind.value}")
    if args.trace_vrt:
        for mut in monitor.mutations:
            print(mut.format())
    print(f"entries after return: {len(vrt)}, reports: {len(detector.reports)}")


if __name__ == "__main__":
    main()
