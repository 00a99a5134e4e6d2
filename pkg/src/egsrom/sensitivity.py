"""One-at-a-time parameter sweeps and influence ranking."""
from __future__ import annotations

import concurrent.futures
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simulator import ReservoirConfig, SimulationError, run

log = logging.getLogger(__name__)

PARAMETER_ORDER = ("k_fz", "well_factor", "p_bhp", "q_inj")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterRange:
    lo: float
    hi: float
    count: int
    spacing: str = "linear"  # or "log"

    def __post_init__(self):
        if self.count < 2:
            raise PlanError("sample count must be >= 2")
        if self.spacing not in ("linear", "log"):
            raise PlanError(f"unknown spacing {self.spacing!r}")
        if self.lo > self.hi:
            raise PlanError("range lower end exceeds upper end")
        if self.spacing == "log" and self.lo <= 0:
            raise PlanError("log spacing needs a positive range")

    def samples(self) -> np.ndarray:
        if self.spacing == "log":
            return np.logspace(np.log10(self.lo), np.log10(self.hi), self.count)
        return np.linspace(self.lo, self.hi, self.count)


def default_ranges() -> dict:
    return {
        "k_fz": ParameterRange(1e-16, 1e-14, 7, "log"),
        "well_factor": ParameterRange(1.78e-13, 5.62e-13, 5, "log"),
        "p_bhp": ParameterRange(9.5e6, 11e6, 4),
        "q_inj": ParameterRange(7.5, 8.5, 3),
    }


@dataclass(frozen=True)
class SweepPlan:
    base: ReservoirConfig = field(default_factory=ReservoirConfig)
    ranges: dict = field(default_factory=default_ranges)
    horizon: float = 120.0

    def __post_init__(self):
        unknown = set(self.ranges) - set(PARAMETER_ORDER)
        if unknown:
            raise PlanError(f"unknown sweep parameters: {sorted(unknown)}")
        if not self.horizon > 0:
            raise PlanError("horizon must be > 0")
        base = self.base.parameters.as_dict()
        for name, rng in self.ranges.items():
            # Relative slack so a range that abuts the base value still counts.
            b = base[name]
            slack = 1e-9 * abs(b)
            if not (rng.lo - slack <= b <= rng.hi + slack
                    or np.isclose(b, rng.lo) or np.isclose(b, rng.hi)):
                raise PlanError(f"{name}: range [{rng.lo}, {rng.hi}] does not contain "
                                f"the base value {b}")

    @property
    def output_times(self) -> np.ndarray:
        return np.arange(0.0, np.floor(self.horizon) + 1.0)

    @classmethod
    def from_json_dict(cls, doc: dict, base: ReservoirConfig | None = None) -> "SweepPlan":
        try:
            ranges = {name: ParameterRange(float(r["lo"]), float(r["hi"]), int(r["count"]),
                                           r.get("spacing", "linear"))
                      for name, r in doc.get("parameters", {}).items()}
        except (KeyError, TypeError) as exc:
            raise PlanError(f"malformed sweep plan: {exc!r}") from None
        return cls(base or ReservoirConfig(), ranges or default_ranges(),
                   float(doc.get("horizon_days", 120.0)))

    @classmethod
    def load(cls, path, base: ReservoirConfig | None = None) -> "SweepPlan":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PlanError(f"{path}: {exc}") from None
        return cls.from_json_dict(doc, base)

    def to_json_dict(self) -> dict:
        return {"horizon_days": self.horizon,
                "parameters": {n: {"lo": r.lo, "hi": r.hi, "count": r.count,
                                   "spacing": r.spacing} for n, r in self.ranges.items()}}


@dataclass
class Family:
    parameter: str
    samples: np.ndarray      # parameter values that ran successfully
    curves: np.ndarray       # (n_samples, n_times)
    failed: list             # parameter values whose run failed


@dataclass
class SensitivityReport:
    times: np.ndarray
    base_curve: np.ndarray
    families: dict
    scores: dict             # parameter -> score, None when unranked
    ranking: list            # ranked parameters, then unranked ones

    @property
    def unranked(self) -> list:
        return [p for p in self.ranking if self.scores[p] is None]

    def to_json_dict(self) -> dict:
        return {
            "ranking": list(self.ranking),
            "scores": dict(self.scores),
            "unranked": self.unranked,
            "samples": {p: f.samples.tolist() for p, f in self.families.items()},
            "failed": {p: list(f.failed) for p, f in self.families.items()},
        }


def influence_score(curves: np.ndarray, base_curve: np.ndarray) -> float:
    """RMS over time of the family spread, relative to the base time-mean power."""
    if curves.shape[0] < 2:
        return 0.0
    spread = curves.max(axis=0) - curves.min(axis=0)
    scale = abs(float(np.mean(base_curve)))
    if scale == 0.0:
        scale = float(np.max(np.abs(base_curve))) or 1.0
    return float(np.sqrt(np.mean(spread ** 2)) / scale)


def rank(scores: dict) -> list:
    """Descending score; ties and unranked (None) keep canonical order."""
    order = {p: i for i, p in enumerate(PARAMETER_ORDER)}
    ranked = sorted((p for p, s in scores.items() if s is not None),
                    key=lambda p: (-scores[p], order.get(p, len(order))))
    unranked = sorted((p for p, s in scores.items() if s is None),
                      key=lambda p: order.get(p, len(order)))
    return ranked + unranked


def linearity_deviation(samples, values) -> float:
    """Max residual of a least-squares line, relative to mean |value|."""
    samples = np.asarray(samples, dtype=float)
    values = np.asarray(values, dtype=float)
    coef = np.polyfit(samples, values, 1)
    resid = values - np.polyval(coef, samples)
    return float(np.max(np.abs(resid)) / np.mean(np.abs(values)))


def _run_curve(base: ReservoirConfig, changes: dict, horizon: float,
               times) -> np.ndarray | None:
    try:
        return run(base.replace(**changes), horizon, output_times=times).power.values
    except (SimulationError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("sweep run failed: %s", exc)
        return None


def run_sweep(plan: SweepPlan | None = None, workers: int = 1) -> SensitivityReport:
    plan = plan or SweepPlan()
    times = plan.output_times
    jobs = [("base", None, {})]
    for name in PARAMETER_ORDER:
        if name not in plan.ranges:
            continue
        for value in plan.ranges[name].samples():
            jobs.append((name, float(value), {name: float(value)}))
    changes = [j[2] for j in jobs]
    n = len(jobs)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            curves = list(pool.map(_run_curve, [plan.base] * n, changes, [plan.horizon] * n,
                                   [times] * n))
    else:
        curves = [_run_curve(plan.base, c, plan.horizon, times) for c in changes]
    if curves[0] is None:
        raise SimulationError("simulation failed at the base point")
    base_curve = curves[0]

    families, scores = {}, {}
    for name in PARAMETER_ORDER:
        if name not in plan.ranges:
            continue
        ok = [(v, c) for (n, v, _), c in zip(jobs, curves) if n == name and c is not None]
        failed = [v for (n, v, _), c in zip(jobs, curves) if n == name and c is None]
        samples = np.array([v for v, _ in ok])
        stack = np.array([c for _, c in ok]) if ok else np.empty((0, times.size))
        families[name] = Family(name, samples, stack, failed)
        scores[name] = influence_score(stack, base_curve) if len(ok) >= 2 else None
    return SensitivityReport(times, base_curve, families, scores, rank(scores))


def export_curves(report: SensitivityReport, directory) -> list:
    """One CSV per family: time column plus one column per sample value."""
    directory = Path(directory)
    written = []
    if not report.families:
        return written
    directory.mkdir(parents=True, exist_ok=True)
    for name, fam in report.families.items():
        path = directory / f"sweep_{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_days"] + [f"{name}={v!r}" for v in fam.samples.tolist()])
            for i, t in enumerate(report.times.tolist()):
                w.writerow([repr(t)] + [repr(float(x)) for x in fam.curves[:, i]])
        written.append(path)
    return written
