"""Shared types, fit metrics and the CSV time-series format.

Conventions used across the package: time in days, power in MW,
pressure in Pa inside the simulator (MPa only as a display label),
mass flow in kg/s, temperature in K.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = ("time_days", "value")


class Quantity(str, enum.Enum):
    POWER_MW = "Power_MW"
    PRESSURE_MPA = "Pressure_MPa"
    MASS_FLOW_KG_S = "MassFlow_kg_s"
    TEMPERATURE_K = "Temperature_K"


class MetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


class ZeroVarianceError(MetricError):
    """R² requested against a constant observation vector."""


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    quantity: Quantity = Quantity.POWER_MW

    def __post_init__(self):
        times = np.array(self.times, dtype=float, copy=True).reshape(-1)
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if times.shape != values.shape:
            raise ValueError(
                f"times and values differ in length ({times.size} vs {values.size})")
        if times.size == 0:
            raise ValueError("empty time series")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("time series contains non-finite entries")
        if times[0] < 0:
            raise ValueError("times must be >= 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "quantity", Quantity(self.quantity))

    def __len__(self):
        return self.times.size

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.times, values, self.quantity)

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write ``time_days,value`` rows; returns the text as well."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, v in zip(self.times, self.values):
            writer.writerow((repr(float(t)), repr(float(v))))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path, quantity=Quantity.POWER_MW) -> "TimeSeries":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_csv_text(text, quantity, source=str(path))

    @classmethod
    def from_csv_text(cls, text: str, quantity=Quantity.POWER_MW,
                      source: str = "<string>") -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
            raise ValueError(f"{source}: expected header 'time_days,value'")
        times, values = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValueError(f"{source}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                times.append(float(row[0]))
                values.append(float(row[1]))
            except ValueError as exc:
                raise ValueError(f"{source}:{lineno}: {exc}") from None
        return cls(np.array(times), np.array(values), quantity)


@dataclass(frozen=True)
class ParameterSet:
    """The four inputs ranked by the sensitivity study.

    ``well_factor`` is the production-well index in m³ (see
    :func:`egsrom.simulator.well_source`).
    """
    k_fz: float
    well_factor: float
    p_bhp: float
    q_inj: float

    def __post_init__(self):
        if not 1e-20 < self.k_fz < 1e-10:
            raise ValueError(f"k_fz={self.k_fz} m² outside (1e-20, 1e-10)")
        if not self.well_factor > 0:
            raise ValueError("well_factor must be > 0")
        if not self.p_bhp > 0:
            raise ValueError("p_bhp must be > 0")
        if not self.q_inj >= 0:
            raise ValueError("q_inj must be >= 0")

    def check_against(self, p_init: float) -> None:
        if self.p_bhp >= p_init:
            raise ValueError(
                f"p_bhp={self.p_bhp} Pa must be below the initial pressure {p_init} Pa")

    def as_dict(self) -> dict:
        return {"k_fz": self.k_fz, "well_factor": self.well_factor,
                "p_bhp": self.p_bhp, "q_inj": self.q_inj}


# Case #1 calibration (constant injection).
BASE_PARAMETERS = ParameterSet(k_fz=7.75e-16, well_factor=3.163e-13,
                               p_bhp=9.5e6, q_inj=7.5)


@dataclass(frozen=True)
class FitMetrics:
    r2: float
    mse: float
    rmse: float
    n: int

    def as_dict(self) -> dict:
        return {"r2": self.r2, "mse": self.mse, "rmse": self.rmse, "n": self.n}


def _pair(observed, predicted, min_len):
    obs = np.asarray(observed, dtype=float).reshape(-1)
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    if obs.shape != pred.shape:
        raise MetricError(f"length mismatch: {obs.size} observed vs {pred.size} predicted")
    if obs.size < min_len:
        raise MetricError(f"need at least {min_len} samples, got {obs.size}")
    return obs, pred


def mse(observed, predicted) -> float:
    obs, pred = _pair(observed, predicted, 1)
    return float(np.mean((obs - pred) ** 2))


def rmse(observed, predicted) -> float:
    return math.sqrt(mse(observed, predicted))


def r_squared(observed, predicted) -> float:
    obs, pred = _pair(observed, predicted, 2)
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVarianceError("R² undefined: observed values have zero variance")
    ss_res = float(np.sum((obs - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def fit_metrics(observed, predicted) -> FitMetrics:
    m = mse(observed, predicted)
    return FitMetrics(r2=r_squared(observed, predicted), mse=m, rmse=math.sqrt(m),
                      n=int(np.size(observed)))


def resample_linear(series: TimeSeries, query_times) -> np.ndarray:
    """Piecewise-linear interpolation; raises on any extrapolation."""
    q = np.asarray(query_times, dtype=float)
    if q.size and (q.min() < series.times[0] or q.max() > series.times[-1]):
        raise ValueError(
            f"query times [{q.min()}, {q.max()}] leave the series span "
            f"[{series.times[0]}, {series.times[-1]}]")
    return np.interp(q, series.times, series.values)


def parse_time_grid(spec: str) -> np.ndarray:
    """``start:end:step`` inclusive of ``end`` when it lands on the grid."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"time grid must be start:end:step, got {spec!r}")
    start, end, step = (float(p) for p in parts)
    if step <= 0 or end < start:
        raise ValueError(f"bad time grid {spec!r}")
    n = int(math.floor((end - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)
