"""Generate the micro-corpus into a directory, check it and print the per-class table."""
import argparse
import tempfile

from vrtsim.corpus import check_corpus, generate_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dir", nargs="?", help="output directory (default: a temporary one)")
    parser.add_argument("-v", "--verbose", action="store_true", help="print one line per case")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        root = args.dir or tmp
        generate_corpus(root)
        check = check_corpus(root)
    print(check.table())
    if args.verbose:
        for r in check.results:
            kinds = ",".join(r.kinds) or "-"
            print(f"{r.name:<28} {r.outcome:<9} {kinds:<14} instrs={r.instr_count}")


if __name__ == "__main__":
    main()
