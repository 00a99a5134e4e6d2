"""Command-line front end: simulate, dataset, fit, score, calibrate, sweep, eval-rom.

Every command writes its artifacts plus ``manifest.json`` under ``--out``.
Exit codes: 0 success, 2 usage, 3 input data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import PARAMETERS, CalibrationError, CalibrationProblem, calibrate, free_parameter
from .core import MetricError, Quantity, TimeSeries, parse_time_grid
from .regression import Curve, Dataset, DatasetError, FitOptions, RomTemplate, Split, \
    fit_rom, score
from .rom import COEFFICIENT_POLICIES, RomEvaluationError, RomKind, RomSpec, builtin_rom, \
    eval_rom_curve
from .sensitivity import PlanError, SweepPlan, export_curves, run_sweep
from .simulator import ReservoirConfig, SimulationError, load_config, run

log = logging.getLogger("egsrom")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4

PUBLISHED_SPLIT = {"train": [-14.0, -14.444, -14.667, -14.889, -15.333],
               "validate": [-14.222, -15.111]}


class InputError(Exception):
    pass


def bundled_dataset_path() -> Path:
    return Path(str(resources.files("egsrom") / "data" / "surrogate" / "dataset.json"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class Run:
    """Collects inputs and artifacts for the run manifest."""

    def __init__(self, command: str, out: Path, args: dict):
        self.command = command
        self.out = out
        self.args = {k: v for k, v in sorted(args.items()) if v is not None}
        self.inputs: list[Path] = []
        self.artifacts: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def add_input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"input file not found: {path}")
        self.inputs.append(path)
        return path

    def artifact(self, name: str) -> Path:
        path = self.out / name
        self.artifacts.append(path)
        return path

    def write_manifest(self) -> Path:
        h = hashlib.sha256()
        h.update(json.dumps({"command": self.command, "args": self.args},
                            sort_keys=True, default=str).encode())
        for p in self.inputs:
            h.update(_sha256(p).encode())
        doc = {
            "command": self.command,
            "version": __version__,
            "output_directory": str(self.out),
            "arguments": {k: str(v) for k, v in self.args.items()},
            "inputs": [str(p) for p in self.inputs],
            "input_hash": h.hexdigest(),
            "artifacts": [{"path": p.relative_to(self.out).as_posix(), "sha256": _sha256(p)}
                          for p in sorted(self.artifacts)],
        }
        return _dump_json(self.out / "manifest.json", doc)


def _load_config(run_: Run, path) -> ReservoirConfig:
    if path is None:
        return ReservoirConfig()
    return load_config(run_.add_input(path))


def _load_dataset(run_: Run, path) -> Dataset:
    path = Path(path) if path else bundled_dataset_path()
    manifest = run_.add_input(path)
    ds = Dataset.load(manifest)
    doc = json.loads(manifest.read_text(encoding="utf-8"))
    entries = doc.get("curves", []) + ([doc["prediction"]] if doc.get("prediction") else [])
    run_.inputs.extend(manifest.parent / e["path"] for e in entries)
    return ds


def _rom_spec(args, run_: Run) -> RomSpec:
    if getattr(args, "rom_file", None):
        return RomSpec.load(run_.add_input(args.rom_file))
    return builtin_rom(RomKind(args.rom), args.coefficients)


def cmd_simulate(args, run_: Run) -> None:
    config = _load_config(run_, args.config)
    result = run(config, args.t_end)
    result.power.to_csv(run_.artifact("power.csv"))
    result.reports_csv(run_.artifact("steps.csv"))


def _dataset_values(args, run_: Run) -> list:
    if args.values:
        doc = json.loads(run_.add_input(args.values).read_text(encoding="utf-8"))
    else:
        doc = PUBLISHED_SPLIT
    entries = []
    try:
        for split in ("train", "validate"):
            entries += [(float(v), Split(split)) for v in doc.get(split, [])]
        extra = set(doc) - {"train", "validate"}
    except (TypeError, ValueError, AttributeError) as exc:
        raise InputError(f"bad k_fz value list: {exc}") from None
    if extra:
        raise InputError(f"unknown split labels {sorted(extra)}; use train/validate")
    if not entries:
        raise InputError("empty k_fz value list")
    keys = [v for v, _ in entries]
    if len(set(keys)) != len(keys):
        raise InputError("duplicate log10 k_fz values")
    return entries


def cmd_dataset(args, run_: Run) -> None:
    config = _load_config(run_, args.config)
    entries = _dataset_values(args, run_)
    times = np.arange(0.0, np.floor(args.t_end) + 1.0)
    curves = []
    # Build in a scratch directory so a failed run leaves no partial dataset.
    with tempfile.TemporaryDirectory(dir=run_.out) as tmp:
        for lk, split in entries:
            power = run(config.replace(k_fz=10.0 ** lk), args.t_end, output_times=times).power
            curves.append(Curve(lk, power, split, f"{split.value}_logk{lk:+.3f}"))
        Dataset(tuple(curves)).save(tmp)
        for f in sorted(Path(tmp).iterdir()):
            target = run_.out / f.name
            shutil.move(str(f), target)
            run_.artifacts.append(target)


def cmd_fit(args, run_: Run) -> None:
    data = _load_dataset(run_, args.dataset)
    template = RomTemplate.for_kind(args.rom)
    report = fit_rom(template, data, FitOptions(stride=args.stride))
    report.spec.save(run_.artifact("rom.json"))
    _dump_json(run_.artifact("fit_report.json"), report.to_json_dict())
    run_.artifact("fit_report.txt").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())


def cmd_score(args, run_: Run) -> None:
    data = _load_dataset(run_, args.dataset)
    spec = _rom_spec(args, run_)
    scores = score(spec, data)
    _dump_json(run_.artifact("score.json"), {"scores": [s.as_dict() for s in scores]})
    for s in scores:
        print(f"{s.name:<24}{s.split.value:<10}r2={s.metrics.r2:.6f}")


def cmd_calibrate(args, run_: Run) -> None:
    config = _load_config(run_, args.config)
    observed = TimeSeries.from_csv(run_.add_input(args.observed))
    if args.schedule == "const":
        schedule = None
    else:
        schedule = TimeSeries.from_csv(run_.add_input(args.schedule), Quantity.MASS_FLOW_KG_S)
    guesses = {}
    for item in args.guess or []:
        name, _, value = item.partition("=")
        try:
            guesses[name.strip()] = float(value)
        except ValueError:
            raise InputError(f"bad --guess {item!r}; expected name=value") from None
    free = []
    for name in [n.strip() for n in args.free.split(",") if n.strip()]:
        if name not in PARAMETERS:
            raise InputError(f"unknown free parameter {name!r}; choose from {sorted(PARAMETERS)}")
        free.append(free_parameter(name, guesses.get(name, getattr(config, name))))
    problem = CalibrationProblem(observed, tuple(free), config, schedule, workers=args.workers)
    result = calibrate(problem)
    _dump_json(run_.artifact("calibration.json"), result.to_json_dict())
    result.best_fit.to_csv(run_.artifact("best_fit.csv"))
    print(f"r2={result.metrics.r2:.6f} mse={result.metrics.mse:.6g} ({result.reason})")


def cmd_sweep(args, run_: Run) -> None:
    config = _load_config(run_, args.config)
    plan = SweepPlan.load(run_.add_input(args.plan), config) if args.plan \
        else SweepPlan(config)
    report = run_sweep(plan, workers=args.workers)
    _dump_json(run_.artifact("sweep.json"), report.to_json_dict())
    for path in export_curves(report, run_.out):
        run_.artifacts.append(path)
    print("ranking: " + ", ".join(report.ranking))


def cmd_eval_rom(args, run_: Run) -> None:
    spec = _rom_spec(args, run_)
    try:
        times = parse_time_grid(args.t)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    eval_rom_curve(spec, times, args.k).to_csv(run_.artifact("rom_eval.csv"))


COMMANDS = {
    "simulate": cmd_simulate, "dataset": cmd_dataset, "fit": cmd_fit, "score": cmd_score,
    "calibrate": cmd_calibrate, "sweep": cmd_sweep, "eval-rom": cmd_eval_rom,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egsrom", description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="concurrent simulator runs")
    parser.add_argument("--coefficients", choices=COEFFICIENT_POLICIES, default="corrected",
                        help="builtin ROM coefficient tables")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the reservoir simulator")
    p.add_argument("--config", help="key = value config file (defaults if omitted)")
    p.add_argument("--t-end", type=float, default=120.0, help="days")

    p = sub.add_parser("dataset", help="simulate training/validation curves")
    p.add_argument("--config")
    p.add_argument("--values", help='JSON {"train": [log10 k...], "validate": [...]}')
    p.add_argument("--t-end", type=float, default=120.0)

    p = sub.add_parser("fit", help="fit a ROM template to a dataset")
    p.add_argument("--dataset", help="dataset manifest (bundled surrogate if omitted)")
    p.add_argument("--rom", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--stride", type=int, default=1,
                   help="use every n-th training sample (ROM-2 bumps need 1)")

    p = sub.add_parser("score", help="score a ROM against a dataset")
    p.add_argument("--dataset")
    p.add_argument("--rom", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--rom-file", help="fitted ROM JSON (overrides --rom)")

    p = sub.add_parser("calibrate", help="calibrate parameters to an observed curve")
    p.add_argument("--config")
    p.add_argument("--observed", required=True, help="power CSV (time_days,value)")
    p.add_argument("--free", default="k_fz,well_factor,p_bhp")
    p.add_argument("--schedule", default="const", help="'const' or injection-rate CSV")
    p.add_argument("--guess", action="append", metavar="NAME=VALUE",
                   help="initial guess (defaults to the config value)")

    p = sub.add_parser("sweep", help="one-at-a-time sensitivity sweep")
    p.add_argument("--config")
    p.add_argument("--plan", help="sweep plan JSON (default plan if omitted)")

    p = sub.add_parser("eval-rom", help="evaluate a ROM on a time grid")
    p.add_argument("--rom", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--rom-file")
    p.add_argument("--k", type=float, required=True, help="fracture-zone permeability, m^2")
    p.add_argument("--t", default="0:120:1", help="start:end:step in days")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        parser.print_usage(sys.stderr)
        print("egsrom: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    skip = {"out", "workers", "verbose", "command"}
    run_ = Run(args.command, args.out, {k: v for k, v in vars(args).items() if k not in skip})
    try:
        COMMANDS[args.command](args, run_)
    except (InputError, DatasetError, PlanError, CalibrationError, MetricError,
            OSError, json.JSONDecodeError) as exc:
        print(f"egsrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, RomEvaluationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"egsrom {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"egsrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    run_.write_manifest()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
