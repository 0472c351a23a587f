"""Command-line entry point: ``plate-interpen <subcommand> <scenario.toml> [--out DIR] [--set key=value]...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .diagnostics import (
    K_STUDY_COLUMNS,
    EnergyLedger,
    gamma_study,
    k_study,
    mms_study,
    write_csv,
)
from .grid_ops import write_field_csv
from .models import PenetrationError, StepFailure, run
from .scenario import Scenario, ScenarioError, parse_scenario

SUBCOMMANDS = ("run", "k-study", "gamma-study", "mms", "validate")
INCOMPLETE = "INCOMPLETE"

# exit statuses
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plate-interpen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", type=Path)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario entry, e.g. --set contact.k=6")
        if name != "validate":
            p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        if name == "k-study":
            p.add_argument("--k", type=_int_list, default=list(range(7)), metavar="K0,K1,...",
                           help="regularization indices (default 0..6)")
        if name == "gamma-study":
            p.add_argument("--levels", type=_int_list, default=list(range(1, 7)), metavar="L0,L1,...",
                           help="gamma = -2^-level for each level (default 1..6)")
            p.add_argument("--k", type=int, default=16, help="fixed regularization index (default 16)")
            p.add_argument("--no-reference", action="store_true", help="skip the h-refined reference run")
        if name == "mms":
            p.add_argument("--halvings", type=int, default=3)
        if name in ("k-study", "gamma-study", "mms"):
            p.add_argument("--workers", type=int, default=None,
                           help="parallel runs (default: PLATE_INTERPEN_THREADS or CPU count)")
    return parser


def _write_run(sc: Scenario, out: Path) -> None:
    traj = run(sc)
    EnergyLedger.of(traj).write(out / "ledger.csv")
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for n in traj.snapshot_steps:
        for name, fld in traj.model.fields(traj.x[n]).items():
            write_field_csv(snap_dir / f"{name}_{n:06d}.csv", fld)
    write_csv(out / "snapshot_times.csv", ("step", "t"),
              [{"step": n, "t": traj.times[n]} for n in traj.snapshot_steps])


def _write_k_study(sc: Scenario, out: Path, args) -> None:
    rows = k_study(sc, args.k, args.workers)
    write_csv(out / "k_study.csv", K_STUDY_COLUMNS, rows)


def _write_gamma_study(sc: Scenario, out: Path, args) -> None:
    gammas = [-(2.0 ** -lv) for lv in sorted(args.levels)]
    rep = gamma_study(sc, gammas, k=args.k, with_reference=not args.no_reference, workers=args.workers)
    rep.write(out / "gamma_study.csv")
    write_csv(out / "gamma_reference.csv", ("gamma", "k", "refinement_error"),
              [{"gamma": gammas[-1], "k": args.k, "refinement_error": rep.refinement_error}])


def _write_mms(sc: Scenario, out: Path, args) -> None:
    rep = mms_study(sc, args.halvings, args.workers)
    rep.write(out / "mms.csv")
    write_csv(out / "orders.csv", ("sweep", "order"),
              [{"sweep": s, "order": rep.order(s)} for s in ("combined", "spatial", "temporal")])


def _error_line(command: str, exc: BaseException) -> str:
    record = {"status": "error", "command": command, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ScenarioError):
        record["invariant"] = exc.invariant
    return json.dumps(record, sort_keys=True)


def execute(args) -> int:
    try:
        sc = parse_scenario(args.scenario, args.overrides)
    except ScenarioError as exc:
        print(_error_line(args.command, exc), file=sys.stderr)
        return EXIT_INPUT
    if args.command == "validate":
        print(json.dumps({"status": "ok", "command": "validate", "scenario": sc.name}, sort_keys=True))
        return EXIT_OK

    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(_error_line(args.command, exc), file=sys.stderr)
        return EXIT_INPUT
    marker = out / INCOMPLETE
    marker.write_text(f"{args.command} {args.scenario}\n")
    writers = {"run": lambda: _write_run(sc, out), "k-study": lambda: _write_k_study(sc, out, args),
               "gamma-study": lambda: _write_gamma_study(sc, out, args), "mms": lambda: _write_mms(sc, out, args)}
    try:
        writers[args.command]()
    except (StepFailure, PenetrationError) as exc:
        line = _error_line(args.command, exc)
        marker.write_text(line + "\n")
        print(line, file=sys.stderr)
        return EXIT_SOLVER
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        line = _error_line(args.command, exc)
        marker.write_text(line + "\n")
        print(line, file=sys.stderr)
        return EXIT_INTERNAL
    marker.unlink()
    print(json.dumps({"status": "ok", "command": args.command, "scenario": sc.name, "out": str(out)},
                     sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return execute(args)


if __name__ == "__main__":
    sys.exit(main())
