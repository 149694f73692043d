"""Print VRT occupancy and storage for programs with many live heap blocks."""
import argparse

from vrtsim.assembler import assemble
from vrtsim.corpus import dma_program
from vrtsim.runner import simulate


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("counts", nargs="*", type=int, default=[1, 10, 100, 324],
                        help="number of malloc calls per program")
    args = parser.parse_args()

    print(f"{'mallocs':>8} {'max entries':>12} {'bits':>8} {'bytes':>8}")
    for n in args.counts:
        stats = simulate(assemble(dma_program(n, size=8))).stats()
        bits = stats["footprint_bits"]
        print(f"{n:>8} {stats['vrt_max_occupancy']:>12} {bits:>8} {(bits + 7) // 8:>8}")


if __name__ == "__main__":
    main()
