"""Command line entry point: ``freqguard run | sweep | preset``.

Exit codes: 0 when every requested check passes, 1 when a check fails or
the simulation diverges, 2 for unreadable or invalid input.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import OUT_ENV, SWEEP_PARAMS, execute, format_table, output_dir, sweep, write_run
from .network import CaseFormatError
from .presets import PRESET_NAMES, UnknownPresetError, preset
from .scenario_io import build, dump_scenario, load_scenario
from .simulation import ScenarioError, SimulationError
from .verification import CHECKS

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("freqguard")


def _check_list(text: str):
    if text == "all":
        return CHECKS
    if text == "none":
        return ()
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown checks {bad}; choose from all, none or {','.join(CHECKS)}")
    return names


def _values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"comma-separated numbers expected, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqguard", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and verify the guarantees")
    r.add_argument("scenario", type=Path)
    r.add_argument("--check", type=_check_list, default=None,
                   help="all, none, or a comma list of: " + ",".join(CHECKS))
    r.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or cwd)")
    r.add_argument("--case", type=Path, default=None, help="case file replacing the scenario's network")
    r.add_argument("--open-loop", action="store_true", help="disable the controller")

    s = sub.add_parser("sweep", help="one run per parameter value and a comparison table")
    s.add_argument("scenario", type=Path)
    s.add_argument("--param", default=None, choices=SWEEP_PARAMS)
    s.add_argument("--values", type=_values, default=None, help="comma-separated values")
    s.add_argument("--out", type=Path, default=None)
    s.add_argument("--case", type=Path, default=None)
    s.add_argument("--workers", type=int, default=None)

    e = sub.add_parser("preset", help="write a named preset scenario file")
    e.add_argument("name", help="one of: " + ", ".join(PRESET_NAMES))
    e.add_argument("--emit", type=Path, default=None, help="destination (default stdout)")
    return p


def _cmd_run(args) -> int:
    sf = load_scenario(args.scenario)
    exp = build(sf, case_override=args.case, open_loop=args.open_loop)
    if args.check is not None:
        exp.checks.names = args.check
    if args.open_loop:
        exp.name += "-open-loop"
        exp.output = {k: v for k, v in exp.output.items() if k not in ("trajectory", "report")}
    traj, reports = execute(exp)
    out = output_dir(args.out, exp.output, sf.base_dir)
    tpath, rpath = write_run(exp, traj, reports, out)
    for name, rep in reports.items():
        print(f"{name}: {'PASS' if rep.passed else 'FAIL'}")
    print(f"trajectory: {tpath}\nreport: {rpath}")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_FAIL


def _cmd_sweep(args) -> int:
    sf = load_scenario(args.scenario)
    spec = sf.sweep or {}
    param = args.param or spec.get("param", "gamma")
    values = args.values if args.values is not None else spec.get("values")
    if not values:
        raise ScenarioError("no sweep values: pass --values or add a sweep section")
    out = output_dir(args.out, sf.output, sf.base_dir)
    rows = sweep(sf, param, values, case_override=args.case, out=out, workers=args.workers)
    table = format_table(rows, param)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{sf.output.get('name', 'run')}-sweep.tsv").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK if all(r["checks_passed"] for r in rows) else EXIT_FAIL


def _cmd_preset(args) -> int:
    text = dump_scenario(preset(args.name))
    if args.emit is None:
        sys.stdout.write(text)
    else:
        args.emit.parent.mkdir(parents=True, exist_ok=True)
        args.emit.write_text(text)
        print(f"wrote {args.emit}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "preset": _cmd_preset}
    try:
        return handlers[args.command](args)
    except (CaseFormatError, ScenarioError, UnknownPresetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
