"""Calibrate reservoir parameters against an observed power curve.

Each residual evaluation is a full simulator run sampled at the observed
times. Positive scale parameters (fracture-zone permeability, well
factor) are searched in log10 space; bottom-hole pressure in MPa and the
wellhead offset in kelvin.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import FitMetrics, ParameterSet, Quantity, TimeSeries, fit_metrics
from .lm import LMOptions, LMResult, ResidualFailure, levenberg_marquardt
from .simulator import ReservoirConfig, SimulationError, run

# name -> (config attribute, coordinate kind, unit scale)
PARAMETERS = {
    "k_fz": ("k_fz", "log10", 1.0),
    "well_factor": ("well_factor", "log10", 1.0),
    "p_bhp": ("p_bhp", "linear", 1e6),
    "wellhead_offset": ("wellhead_offset", "linear", 1.0),
}

DEFAULT_BOUNDS = {
    "k_fz": (1e-17, 1e-13),
    "well_factor": (1e-14, 1e-11),
    "p_bhp": (1e6, 13e6),
    "wellhead_offset": (-150.0, 50.0),
}

# Forward-difference steps in the search coordinates.
LOG10_STEP = 1e-3
LINEAR_REL_STEP = 1e-3


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class FreeParameter:
    name: str
    initial: float
    lower: float
    upper: float
    # "" keeps the default coordinate; "log10" or "linear" overrides it.
    space: str = ""

    def __post_init__(self):
        if self.name not in PARAMETERS:
            raise CalibrationError(f"unknown parameter {self.name!r}; "
                                   f"choose from {sorted(PARAMETERS)}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise CalibrationError(f"{self.name}: bounds must be finite")
        if not self.lower <= self.initial <= self.upper:
            raise CalibrationError(
                f"{self.name}: initial {self.initial!r} outside [{self.lower!r}, {self.upper!r}]")
        if self.space not in ("", "log10", "linear"):
            raise CalibrationError(f"{self.name}: unknown search space {self.space!r}")
        if self.is_log and self.lower <= 0:
            raise CalibrationError(f"{self.name}: log10 parameter needs positive bounds")

    @property
    def is_log(self) -> bool:
        return (self.space or PARAMETERS[self.name][1]) == "log10"

    @property
    def unit(self) -> float:
        _, kind, scale = PARAMETERS[self.name]
        # A scale parameter searched linearly is measured in units of its upper bound.
        return self.upper if kind == "log10" else scale

    def to_search(self, value: float) -> float:
        return math.log10(value) if self.is_log else value / self.unit

    def from_search(self, u: float) -> float:
        # log10 then 10** does not round-trip exactly; keep the guess itself.
        if u == self.to_search(self.initial):
            return self.initial
        return 10.0 ** u if self.is_log else u * self.unit

    def fd_step(self, u: float) -> float:
        if self.is_log:
            return LOG10_STEP
        return LINEAR_REL_STEP * abs(u) if u != 0.0 else LINEAR_REL_STEP


def free_parameter(name: str, initial: float, bounds=None, space: str = "") -> FreeParameter:
    if name not in PARAMETERS:
        raise CalibrationError(f"unknown parameter {name!r}; choose from {sorted(PARAMETERS)}")
    lo, hi = bounds if bounds is not None else DEFAULT_BOUNDS[name]
    return FreeParameter(name, float(initial), float(lo), float(hi), space)


@dataclass(frozen=True)
class CalibrationProblem:
    observed: TimeSeries
    free: tuple
    base: ReservoirConfig = field(default_factory=ReservoirConfig)
    # None keeps the base config's schedule; a float is a constant rate.
    schedule: float | TimeSeries | None = None
    lm: LMOptions = field(default_factory=LMOptions)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        if not self.free:
            raise CalibrationError("no free parameters")
        names = [p.name for p in self.free]
        if len(set(names)) != len(names):
            raise CalibrationError(f"duplicate free parameters: {names}")
        if len(self.observed) < 10:
            raise CalibrationError(f"observed curve has {len(self.observed)} samples; need >= 10")
        if len(self.observed) < len(self.free):
            raise CalibrationError("fewer observations than free parameters")

    def config_for(self, values: dict) -> ReservoirConfig:
        cfg = self.base
        if isinstance(self.schedule, TimeSeries):
            cfg = cfg.replace(injection_schedule=self.schedule)
        elif self.schedule is not None:
            cfg = cfg.replace(q_inj=float(self.schedule), injection_schedule=None)
        return cfg.replace(**{PARAMETERS[n][0]: v for n, v in values.items()})

    def values(self, u) -> dict:
        return {p.name: p.from_search(float(ui)) for p, ui in zip(self.free, u)}

    def simulate(self, values: dict) -> TimeSeries:
        return simulate_curve(self.config_for(values), self.observed.times)


def simulate_curve(config: ReservoirConfig, times) -> TimeSeries:
    times = np.asarray(times, dtype=float)
    return run(config, float(times[-1]), output_times=times).power


def _simulate_values(config: ReservoirConfig, times) -> np.ndarray | None:
    try:
        return simulate_curve(config, times).values
    except (SimulationError, ValueError, np.linalg.LinAlgError):
        return None


@dataclass
class CalibrationResult:
    parameters: ParameterSet
    values: dict
    metrics: FitMetrics
    initial_mse: float
    trace: list  # [{"parameters": {...}, "cost": float}]
    best_fit: TimeSeries
    converged: bool
    reason: str
    iterations: int
    evaluations: int
    covariance: list | None

    @property
    def mse(self) -> float:
        return self.metrics.mse

    def to_json_dict(self) -> dict:
        return {
            "parameters": self.parameters.as_dict(),
            "free": self.values,
            "metrics": self.metrics.as_dict(),
            "initial_mse": self.initial_mse,
            "converged": self.converged,
            "reason": self.reason,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "covariance_search_space": self.covariance,
            "trace": self.trace,
        }


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    """Levenberg-Marquardt fit of the free parameters to ``problem.observed``."""
    obs = problem.observed
    u0 = np.array([p.to_search(p.initial) for p in problem.free])
    lo = np.array([p.to_search(p.lower) for p in problem.free])
    hi = np.array([p.to_search(p.upper) for p in problem.free])

    def residual(u):
        sim = _simulate_values(problem.config_for(problem.values(u)), obs.times)
        if sim is None:
            raise ResidualFailure(f"simulation failed at {problem.values(u)}")
        return sim - obs.values

    try:
        r0 = residual(u0)
    except ResidualFailure as exc:
        raise CalibrationError(f"simulator fails at the initial guess: {exc}") from None
    # LM evaluates the initial guess first; reuse that run.
    cached = {u0.tobytes(): r0}

    def residual_cached(u):
        hit = cached.pop(np.asarray(u, dtype=float).tobytes(), None)
        return hit if hit is not None else residual(u)

    def jac_fd(u, r0):
        steps = np.array([p.fd_step(ui) for p, ui in zip(problem.free, u)])
        # Step away from an active upper bound so the trial stays feasible.
        steps = np.where(u + steps > hi, -steps, steps)
        configs = []
        for j in range(u.size):
            up = u.copy()
            up[j] += steps[j]
            configs.append(problem.config_for(problem.values(up)))
        if problem.workers > 1:
            with concurrent.futures.ProcessPoolExecutor(problem.workers) as pool:
                cols = list(pool.map(_simulate_values, configs, [obs.times] * len(configs)))
        else:
            cols = [_simulate_values(c, obs.times) for c in configs]
        jac = np.empty((r0.size, u.size))
        for j, col in enumerate(cols):
            if col is None:
                raise CalibrationError("simulator failed on a finite-difference column")
            jac[:, j] = (col - obs.values - r0) / steps[j]
        return jac

    lm: LMResult = levenberg_marquardt(residual_cached, u0, bounds=(lo, hi), options=problem.lm,
                                       jac_fd=jac_fd)
    values = problem.values(lm.x)
    best = problem.simulate(values)
    n = obs.values.size
    trace = [{"parameters": problem.values(x), "cost": 2.0 * c / n} for x, c in lm.trace]
    cov = lm.covariance()
    cfg = problem.config_for(values)
    return CalibrationResult(
        parameters=cfg.parameters,
        values=values,
        metrics=fit_metrics(obs.values, best.values),
        initial_mse=2.0 * lm.initial_cost / n,
        trace=trace,
        best_fit=best,
        converged=lm.converged,
        reason=lm.reason,
        iterations=lm.iterations,
        evaluations=lm.evaluations,
        covariance=None if cov is None else cov.tolist(),
    )


def twin_problem(truth: ReservoirConfig | None = None, factor: float = 3.0,
                 names=("k_fz", "well_factor", "p_bhp"), t_end: float = 120.0,
                 lm: LMOptions | None = None, workers: int = 1) -> CalibrationProblem:
    """Synthetic observation from ``truth`` with guesses perturbed by ``factor``.

    Scale parameters are multiplied by ``factor``; bottom-hole pressure is
    divided by it, since multiplying would put it above the initial
    reservoir pressure.
    """
    truth = truth or ReservoirConfig()
    times = np.arange(0.0, t_end + 1.0)
    observed = TimeSeries(times, simulate_curve(truth, times).values, Quantity.POWER_MW)
    free = []
    for name in names:
        value = getattr(truth, PARAMETERS[name][0])
        if name == "p_bhp":
            guess = value / factor
        elif name == "wellhead_offset":
            guess = value + 10.0 * factor
        else:
            guess = value * factor
        free.append(free_parameter(name, guess))
    return CalibrationProblem(observed, tuple(free), dataclasses.replace(truth),
                              lm=lm or LMOptions(), workers=workers)
