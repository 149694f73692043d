"""vrtsim command line: run, gen-corpus, check-corpus."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .assembler import AssemblyError, assemble, read_image
from .corpus import check_corpus, generate_corpus
from .detector import ArithAction, DetectionPolicy
from .machine import DEFAULT_STACK_TOP, MachineError, format_event
from .runner import DEFAULT_MAX_STEPS, EXIT_FAULT, RunConfig, simulate


def _load_program(path: str):
    p = Path(path)
    if p.suffix == ".bin":
        return read_image(p)
    return assemble(p.read_text())


def stack_top_from_env() -> int:
    value = os.environ.get("VRTSIM_STACK_TOP")
    return int(value, 0) if value else DEFAULT_STACK_TOP


def cmd_run(config: RunConfig, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        image = _load_program(config.program_path)
    except (OSError, AssemblyError, ValueError) as exc:
        print(f"vrtsim: {exc}", file=err)
        return EXIT_FAULT
    listener = (lambda mut: print(mut.format(), file=out)) if config.trace_vrt else None
    try:
        sim = simulate(image, monitoring=config.monitoring, policy=config.policy,
                       max_steps=config.max_steps, stack_top=config.stack_top,
                       record=config.exec_trace, vrt_listener=listener)
    except MachineError as exc:
        print(f"vrtsim: {exc}", file=err)
        return EXIT_FAULT
    if config.exec_trace:
        for ev in sim.result.events:
            print(format_event(ev), file=out)
    if sim.result.error is not None:
        print(f"vrtsim: machine fault: {sim.result.error}", file=err)
    if config.vrt_dump and sim.vrt is not None:
        dump = sim.vrt.dump()
        if dump:
            print(dump, file=out)
    if config.report_json:
        Path(config.report_json).write_text(json.dumps(sim.report(), indent=2) + "\n")
    if config.stats:
        print(json.dumps(sim.stats(), indent=2), file=out)
    return sim.exit_code


def cmd_stats(config: RunConfig) -> dict:
    image = _load_program(config.program_path)
    sim = simulate(image, monitoring=config.monitoring, policy=config.policy,
                   max_steps=config.max_steps, stack_top=config.stack_top)
    return sim.stats()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrtsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="assemble and run a program under VRT monitoring")
    run_p.add_argument("file", help="assembly source, or a .bin image with a .bin.sym sidecar")
    run_p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    run_p.add_argument("--policy", choices=[a.value for a in ArithAction], default="warn",
                       help="action for out-of-bounds pointer arithmetic")
    run_p.add_argument("--halt-on-violation", action="store_true")
    run_p.add_argument("--no-monitor", action="store_true", help="run without monitor and detector")
    run_p.add_argument("--report", metavar="OUT.json", help="write the violation report as JSON")
    run_p.add_argument("--vrt-dump", action="store_true", help="print the final VRT, top entry first")
    run_p.add_argument("--trace", action="store_true", help="print one line per execution event")
    run_p.add_argument("--trace-vrt", action="store_true", help="print one line per VRT mutation")
    run_p.add_argument("--stats", action="store_true", help="print run statistics as JSON")

    gen_p = sub.add_parser("gen-corpus", help="write the overflow micro-corpus and its manifest")
    gen_p.add_argument("dir")

    chk_p = sub.add_parser("check-corpus", help="run every corpus case against its manifest")
    chk_p.add_argument("dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_FAULT if exc.code else 0

    if args.command == "run":
        if args.max_steps <= 0:
            print("vrtsim: --max-steps must be positive", file=sys.stderr)
            return EXIT_FAULT
        try:
            stack_top = stack_top_from_env()
        except ValueError:
            print("vrtsim: bad VRTSIM_STACK_TOP", file=sys.stderr)
            return EXIT_FAULT
        config = RunConfig(
            program_path=args.file,
            max_steps=args.max_steps,
            policy=DetectionPolicy(ArithAction(args.policy), args.halt_on_violation),
            monitoring=not args.no_monitor,
            stack_top=stack_top,
            report_json=args.report,
            vrt_dump=args.vrt_dump,
            exec_trace=args.trace,
            trace_vrt=args.trace_vrt,
            stats=args.stats,
        )
        return cmd_run(config)
    if args.command == "gen-corpus":
        try:
            manifest = generate_corpus(args.dir)
        except OSError as exc:
            print(f"vrtsim: {exc}", file=sys.stderr)
            return EXIT_FAULT
        print(f"wrote {manifest}")
        return 0
    try:
        check = check_corpus(args.dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"vrtsim: {exc}", file=sys.stderr)
        return EXIT_FAULT
    print(check.table())
    return 1 if check.mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
