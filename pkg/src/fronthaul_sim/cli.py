"""Command line entry point: ``fronthaul-sim run`` and ``fronthaul-sim presets``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import PRESETS, SpecError, parse_spec, preset, resolve_seed, run_experiment, write_results
from .optimizer import SolverError

EXIT_OK, EXIT_SPEC, EXIT_SOLVER = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fronthaul-sim", description="Uplink backhaul compression rate sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and write CSV results")
    run.add_argument("spec", nargs="?", help="experiment spec (JSON)")
    run.add_argument("-o", "--output", help="CSV path (defaults to the output field of the experiment file)")
    run.add_argument("--preset", choices=sorted(PRESETS), help="use a built-in figure preset instead of a file")
    run.add_argument("--seed", type=int, help="master seed (overrides spec and environment)")
    run.add_argument("--trials", type=int, help="override the Monte Carlo trial count")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on this)")
    run.add_argument("--timing", action="store_true", help="fill the wall_ms column")

    presets = sub.add_parser("presets", help="write the figure presets as JSON spec files")
    presets.add_argument("-d", "--dir", default=".", help="destination directory")
    presets.add_argument("names", nargs="*", help=f"subset to write ({', '.join(sorted(PRESETS))})")
    return parser


def _load(args) -> tuple:
    if (args.spec is None) == (args.preset is None):
        raise SpecError("arguments", "give exactly one of a spec file or --preset")
    if args.preset:
        spec = preset(args.preset)
    else:
        try:
            text = Path(args.spec).read_text()
        except OSError as exc:
            raise SpecError(args.spec, exc.strerror or str(exc)) from None
        spec = parse_spec(text)
    if args.trials is not None:
        if args.trials < 1:
            raise SpecError("--trials", "must be >= 1")
        spec = replace(spec, trials=args.trials)
    if args.jobs < 1:
        raise SpecError("--jobs", "must be >= 1")
    output = args.output or spec.output
    if output is None:
        raise SpecError("output", "no output path; pass -o")
    return spec, output


def _run(args) -> int:
    spec, output = _load(args)
    seed = resolve_seed(args.seed, spec)
    rows = run_experiment(spec, seed, args.jobs)
    write_results(rows, spec, seed, output, args.timing)
    print(f"wrote {len(rows)} rows to {output}")
    return EXIT_OK


def _presets(args) -> int:
    unknown = sorted(set(args.names) - set(PRESETS))
    if unknown:
        raise SpecError("presets", f"unknown preset(s) {', '.join(unknown)}")
    target = Path(args.dir)
    target.mkdir(parents=True, exist_ok=True)
    for name in args.names or sorted(PRESETS):
        path = target / f"{name}.json"
        path.write_text(json.dumps(PRESETS[name], indent=2) + "\n")
        print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _presets(args)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
