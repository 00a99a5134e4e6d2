"""Fit ROM coefficient tables to simulated power curves and score them.

Every ROM template is linear in its free coefficients (polynomial terms,
exp/sin multipliers and bump amplitudes; bump centres, steepness and
exponents stay fixed), so the analytic Jacobian is the design matrix and
the Levenberg-Marquardt solve converges to the linear least-squares
optimum.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import FitMetrics, Quantity, TimeSeries, fit_metrics
from .lm import LMOptions, levenberg_marquardt
from .rom import (AugmentedTimeFunction, HeavisideBump, RomKind, RomSpec, TimePolynomial,
                  X_TIME_SHIFT, builtin_rom, eval_rom_curve)

# Field samples added to the ROM-2 training set when a prediction curve exists.
ROM2_FIELD_TIMES = (0.0, 20.0, 25.0, 40.0, 60.0, 80.0, 100.0, 120.0)

TRAIN_LOG10K = (-14.0, -14.444, -14.667, -14.889, -15.333)
VALIDATE_LOG10K = (-14.222, -15.111)


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATE = "validate"
    PREDICT = "predict"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Curve:
    log10_k: float
    series: TimeSeries
    split: Split
    name: str = ""

    @property
    def k_fz(self) -> float:
        return 10.0 ** self.log10_k


@dataclass(frozen=True)
class Dataset:
    curves: tuple
    prediction: Curve | None = None

    def __post_init__(self):
        curves = tuple(self.curves)
        object.__setattr__(self, "curves", curves)
        if not any(c.split is Split.TRAIN for c in curves):
            raise DatasetError("dataset needs at least one training curve")
        for c in curves + ((self.prediction,) if self.prediction else ()):
            if not -20.0 <= c.log10_k <= -10.0:
                raise DatasetError(f"log10_k={c.log10_k} outside [-20, -10]")
        if any(c.split is Split.PREDICT for c in curves):
            raise DatasetError("prediction curve goes in the 'prediction' slot")
        if self.prediction is not None and self.prediction.split is not Split.PREDICT:
            raise DatasetError("prediction curve must carry the predict split")

    def by_split(self, split: Split):
        return [c for c in self.curves if c.split is split]

    @property
    def all_curves(self):
        return self.curves + ((self.prediction,) if self.prediction else ())

    # Manifest: {"curves": [{"path", "log10_k_fz", "split", "name"?}],
    #            "prediction": {"path", "log10_k_fz"}?}
    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"{path}: {exc}") from None
        base = path.parent

        def load_curve(entry, split=None):
            try:
                series = TimeSeries.from_csv(base / entry["path"])
                return Curve(float(entry["log10_k_fz"]), series,
                             Split(split or entry["split"]),
                             entry.get("name", Path(entry["path"]).stem))
            except (KeyError, ValueError, OSError) as exc:
                raise DatasetError(f"{path}: bad curve entry {entry!r}: {exc}") from None

        curves = tuple(load_curve(e) for e in doc.get("curves", []))
        pred = doc.get("prediction")
        prediction = load_curve(pred, Split.PREDICT.value) if pred else None
        return cls(curves, prediction)

    def save(self, directory, manifest_name="dataset.json") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, c in enumerate(self.curves):
            fname = f"{c.name or f'curve_{i}'}.csv"
            c.series.to_csv(directory / fname)
            entries.append({"path": fname, "log10_k_fz": c.log10_k, "split": c.split.value,
                            "name": c.name or f"curve_{i}"})
        doc = {"curves": entries}
        if self.prediction is not None:
            fname = f"{self.prediction.name or 'prediction'}.csv"
            self.prediction.series.to_csv(directory / fname)
            doc["prediction"] = {"path": fname, "log10_k_fz": self.prediction.log10_k,
                                 "name": self.prediction.name or "prediction"}
        out = directory / manifest_name
        out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return out


@dataclass(frozen=True)
class RomTemplate:
    """A structural skeleton: initial spec plus which coefficients are free.

    ``free_poly[i][d]`` marks polynomial coefficient d of function i;
    ``free_exp``/``free_sin`` the exp/sin multipliers; ``free_bumps[j]``
    the amplitude of bump j.
    """
    spec: RomSpec
    free_poly: tuple
    free_exp: tuple = (False,) * 4
    free_sin: tuple = (False,) * 4
    free_bumps: tuple = ()

    @property
    def n_free(self) -> int:
        return (sum(sum(f) for f in self.free_poly) + sum(self.free_exp)
                + sum(self.free_sin) + sum(self.free_bumps))

    @classmethod
    def for_kind(cls, kind, degree: int | None = None) -> "RomTemplate":
        """All-free template with the published structure of ROM-1/2/3."""
        kind = RomKind(kind)
        deg = {RomKind.ROM1: 4, RomKind.ROM2: 8, RomKind.ROM3: 10}[kind] if degree is None \
            else degree
        funcs = tuple(AugmentedTimeFunction(TimePolynomial([0.0] * (deg + 1))) for _ in range(4))
        free_poly = tuple((True,) * (deg + 1) for _ in range(4))
        if kind is RomKind.ROM2:
            bumps = tuple(replace(b, m=0.0) for b in builtin_rom(RomKind.ROM2).bumps)
            return cls(RomSpec(kind, funcs, bumps, policy="fitted"), free_poly,
                       (True,) * 4, (True,) * 4, (True,) * len(bumps))
        return cls(RomSpec(kind, funcs, policy="fitted"), free_poly)

    @classmethod
    def constant(cls) -> "RomTemplate":
        funcs = tuple(AugmentedTimeFunction(TimePolynomial([0.0])) for _ in range(4))
        return cls(RomSpec(RomKind.ROM1, funcs, policy="fitted"),
                   ((True,), (False,), (False,), (False,)))

    @classmethod
    def frozen(cls, spec: RomSpec) -> "RomTemplate":
        return cls(spec, tuple((False,) * len(f.polynomial.coeffs) for f in spec.coeff_functions),
                   free_bumps=(False,) * len(spec.bumps))

    def parameter_vector(self) -> np.ndarray:
        vals = []
        for f, mask in zip(self.spec.coeff_functions, self.free_poly):
            vals += [c for c, free in zip(f.polynomial.coeffs, mask) if free]
        vals += [f.exp_base_coeff for f, free in zip(self.spec.coeff_functions, self.free_exp)
                 if free]
        vals += [f.sin_coeff for f, free in zip(self.spec.coeff_functions, self.free_sin) if free]
        vals += [b.m for b, free in zip(self.spec.bumps, self.free_bumps) if free]
        return np.array(vals, dtype=float)

    def with_parameters(self, theta) -> RomSpec:
        it = iter(np.asarray(theta, dtype=float).tolist())
        polys = []
        for f, mask in zip(self.spec.coeff_functions, self.free_poly):
            polys.append([next(it) if free else c for c, free in zip(f.polynomial.coeffs, mask)])
        exps = [next(it) if free else f.exp_base_coeff
                for f, free in zip(self.spec.coeff_functions, self.free_exp)]
        sins = [next(it) if free else f.sin_coeff
                for f, free in zip(self.spec.coeff_functions, self.free_sin)]
        bumps = [replace(b, m=next(it)) if free else b
                 for b, free in zip(self.spec.bumps, self.free_bumps)]
        funcs = [AugmentedTimeFunction(TimePolynomial(p), e, s)
                 for p, e, s in zip(polys, exps, sins)]
        return RomSpec(self.spec.kind, funcs, bumps, policy=self.spec.policy)

    def design(self, times: np.ndarray, log10_k: float):
        """(columns for free parameters, contribution of frozen ones)."""
        t = np.asarray(times, dtype=float)
        x = abs(log10_k) + X_TIME_SHIFT * t
        free_cols, fixed = [], np.zeros_like(t)
        exp_t, sin_t = np.power(0.1, t), np.sin(t)
        for i, (f, mask) in enumerate(zip(self.spec.coeff_functions, self.free_poly)):
            xi = x ** i
            for d, (c, free) in enumerate(zip(f.polynomial.coeffs, mask)):
                col = xi * t ** d
                if free:
                    free_cols.append(col)
                else:
                    fixed = fixed + c * col
        for i, (f, free) in enumerate(zip(self.spec.coeff_functions, self.free_exp)):
            col = x ** i * exp_t
            if free:
                free_cols.append(col)
            else:
                fixed = fixed + f.exp_base_coeff * col
        for i, (f, free) in enumerate(zip(self.spec.coeff_functions, self.free_sin)):
            col = x ** i * sin_t
            if free:
                free_cols.append(col)
            else:
                fixed = fixed + f.sin_coeff * col
        for b, free in zip(self.spec.bumps, self.free_bumps):
            if free:
                free_cols.append(replace(b, m=1.0)(t))
            else:
                fixed = fixed + b(t)
        cols = np.column_stack(free_cols) if free_cols else np.zeros((t.size, 0))
        return cols, fixed


@dataclass
class CurveScore:
    name: str
    split: Split
    log10_k: float
    metrics: FitMetrics

    def as_dict(self) -> dict:
        return {"name": self.name, "split": self.split.value, "log10_k_fz": self.log10_k,
                **self.metrics.as_dict()}


@dataclass
class FitReport:
    spec: RomSpec
    scores: list
    iterations: int
    final_cost: float
    converged: bool
    reason: str
    n_parameters: int
    n_residuals: int
    extra: dict = field(default_factory=dict)

    def metrics_for(self, split: Split):
        return [s for s in self.scores if s.split is split]

    def to_json_dict(self) -> dict:
        return {
            "rom": self.spec.to_json_dict(),
            "scores": [s.as_dict() for s in self.scores],
            "diagnostics": {"iterations": self.iterations, "final_cost": self.final_cost,
                            "converged": self.converged, "reason": self.reason,
                            "n_parameters": self.n_parameters,
                            "n_residuals": self.n_residuals, **self.extra},
        }

    def table(self) -> str:
        lines = [f"{'curve':<24}{'split':<10}{'log10 k':>10}{'R2':>12}{'MSE':>14}{'RMSE':>12}"]
        for s in self.scores:
            m = s.metrics
            lines.append(f"{s.name:<24}{s.split.value:<10}{s.log10_k:>10.3f}"
                         f"{m.r2:>12.5f}{m.mse:>14.6g}{m.rmse:>12.6g}")
        lines.append(f"converged={self.converged} ({self.reason}), iterations={self.iterations}, "
                     f"cost={self.final_cost:.6g}")
        return "\n".join(lines)


@dataclass
class FitOptions:
    stride: int = 1
    lm: LMOptions = field(default_factory=LMOptions)
    # None: ROM-2 templates use the field samples when a prediction curve exists.
    prediction_times: tuple | None = None
    initial_mean: bool = True

    def __post_init__(self):
        if self.stride < 1:
            raise DatasetError(f"stride must be >= 1, got {self.stride}")


def _curve_name(c: Curve, i: int) -> str:
    return c.name or f"{c.split.value}_{i}"


def score(spec: RomSpec, data: Dataset) -> list:
    """R², MSE and RMSE of ``spec`` on every curve (prediction included)."""
    out = []
    for i, c in enumerate(data.all_curves):
        pred = eval_rom_curve(spec, c.series.times, c.k_fz).values
        out.append(CurveScore(_curve_name(c, i), c.split, c.log10_k,
                              fit_metrics(c.series.values, pred)))
    return out


def _training_rows(template: RomTemplate, data: Dataset, options: FitOptions):
    blocks, targets = [], []
    for c in data.by_split(Split.TRAIN):
        t = c.series.times[::options.stride]
        y = c.series.values[::options.stride]
        cols, fixed = template.design(t, c.log10_k)
        blocks.append(cols)
        targets.append(y - fixed)
    times = options.prediction_times
    if times is None and template.spec.kind is RomKind.ROM2:
        times = ROM2_FIELD_TIMES
    if data.prediction is not None and times:
        p = data.prediction
        t = np.array([tt for tt in times if p.series.times[0] <= tt <= p.series.times[-1]])
        if t.size:
            y = np.interp(t, p.series.times, p.series.values)
            cols, fixed = template.design(t, p.log10_k)
            blocks.append(cols)
            targets.append(y - fixed)
    return np.vstack(blocks), np.concatenate(targets)


def fit_rom(template: RomTemplate, data: Dataset, options: FitOptions | None = None) -> FitReport:
    """Least-squares fit of the template's free coefficients to the training curves."""
    options = options or FitOptions()
    A, b = _training_rows(template, data, options)
    n_free = A.shape[1]
    if n_free > b.size:
        raise DatasetError(
            f"under-determined fit: {n_free} free coefficients, {b.size} residuals")
    theta0 = template.parameter_vector()
    if options.initial_mean and n_free:
        theta0 = np.zeros(n_free)
        if template.free_poly[0] and template.free_poly[0][0]:
            theta0[0] = float(np.mean(np.concatenate(
                [c.series.values for c in data.by_split(Split.TRAIN)])))
    if n_free == 0:
        fitted = template.spec
        cost = 0.5 * float(b @ b)
        iterations, converged, reason = 0, True, "no free coefficients"
    else:
        result = levenberg_marquardt(lambda th: A @ th - b, theta0, jac=lambda th: A,
                                     options=options.lm)
        fitted = template.with_parameters(result.x)
        cost, iterations = result.cost, result.iterations
        converged, reason = result.converged, result.reason
    return FitReport(fitted, score(fitted, data), iterations, cost, converged, reason,
                     n_free, int(b.size))


def dataset_from_curves(curves: dict, train=TRAIN_LOG10K, validate=VALIDATE_LOG10K,
                        prediction: Curve | None = None) -> Dataset:
    """Build a dataset from ``{log10_k: TimeSeries}`` using the given split."""
    out = []
    for split, keys in ((Split.TRAIN, train), (Split.VALIDATE, validate)):
        for lk in keys:
            out.append(Curve(lk, curves[lk], split, f"{split.value}_logk{lk:+.3f}"))
    return Dataset(tuple(out), prediction)


def constant_curve_dataset(values, log10_k=-15.0) -> Dataset:
    series = TimeSeries(np.arange(len(values), dtype=float), values, Quantity.POWER_MW)
    return Dataset((Curve(log10_k, series, Split.TRAIN, "constant"),))
