"""Closed-form thermal-power ROMs in time and fracture-zone permeability.

All three models share the template

    P(t, k) = f_0(t) + f_1(t) x + f_2(t) x² + f_3(t) x³  [+ bumps(t)]
    x = |log10 k| + 1e-6 t

where each ``f_i`` is a polynomial in t, optionally augmented with
``e·0.1**t + s·sin(t)``, and the bump sum (ROM-2 only) is a sum of
smoothed Heaviside steps ``m (1 + tanh(n (t - t_c)))**r``.
"""
from __future__ import annotations

import decimal
import enum
import functools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Quantity, TimeSeries

X_TIME_SHIFT = 1e-6
COEFFICIENT_POLICIES = ("corrected", "as-printed")


class RomKind(enum.IntEnum):
    ROM1 = 1
    ROM2 = 2
    ROM3 = 3


MAX_DEGREE = {RomKind.ROM1: 4, RomKind.ROM2: 8, RomKind.ROM3: 10}


class RomEvaluationError(ArithmeticError):
    def __init__(self, message, term=None, time_index=None):
        super().__init__(message)
        self.term = term
        self.time_index = time_index


@dataclass(frozen=True)
class TimePolynomial:
    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise ValueError("polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError("polynomial coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        acc = np.full_like(t, self.coeffs[-1])
        for c in reversed(self.coeffs[:-1]):
            acc = acc * t + c
        return acc

    def padded(self, degree: int) -> "TimePolynomial":
        if degree < self.degree:
            raise ValueError("cannot pad to a lower degree")
        return TimePolynomial(self.coeffs + (0.0,) * (degree - self.degree))


@dataclass(frozen=True)
class AugmentedTimeFunction:
    polynomial: TimePolynomial
    exp_base_coeff: float = 0.0
    sin_coeff: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.polynomial(t)
        if self.exp_base_coeff:
            out = out + self.exp_base_coeff * np.power(0.1, t)
        if self.sin_coeff:
            out = out + self.sin_coeff * np.sin(t)
        return out


@dataclass(frozen=True)
class HeavisideBump:
    m: float
    n: float
    t_center: float
    r: float

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("bump steepness n must be > 0")

    def __call__(self, t):
        # 1 + tanh(z) = 2 / (1 + exp(-2z)); the log form keeps small r exact far
        # below the step where 1 + tanh(z) underflows.
        z = self.n * (np.asarray(t, dtype=float) - self.t_center)
        log_base = math.log(2.0) - np.logaddexp(0.0, -2.0 * z)
        return self.m * np.exp(self.r * log_base)


@dataclass(frozen=True)
class RomSpec:
    kind: RomKind
    coeff_functions: tuple
    bumps: tuple = field(default=())
    policy: str = "corrected"

    def __post_init__(self):
        object.__setattr__(self, "kind", RomKind(self.kind))
        funcs = tuple(self.coeff_functions)
        if len(funcs) != 4:
            raise ValueError("a ROM needs exactly four coefficient functions")
        object.__setattr__(self, "coeff_functions", funcs)
        object.__setattr__(self, "bumps", tuple(self.bumps))
        limit = MAX_DEGREE[self.kind]
        for i, f in enumerate(funcs):
            if f.polynomial.degree > limit:
                raise ValueError(
                    f"{self.kind.name} coefficient {i} has degree "
                    f"{f.polynomial.degree} > {limit}")
            if self.kind is not RomKind.ROM2 and (f.exp_base_coeff or f.sin_coeff):
                raise ValueError(f"{self.kind.name} has no exp/sin terms")
        if self.bumps and self.kind is not RomKind.ROM2:
            raise ValueError(f"{self.kind.name} has no bump terms")

    def without_bumps(self) -> "RomSpec":
        return replace(self, bumps=())

    # JSON document: {"kind", "coefficients": [[...]x4], "exp": [..x4],
    # "sin": [..x4], "bumps": [{"m","n","t_center","r"}, ...]}
    def to_json_dict(self) -> dict:
        return {
            "kind": int(self.kind),
            "policy": self.policy,
            "coefficients": [list(f.polynomial.coeffs) for f in self.coeff_functions],
            "exp": [f.exp_base_coeff for f in self.coeff_functions],
            "sin": [f.sin_coeff for f in self.coeff_functions],
            "bumps": [{"m": b.m, "n": b.n, "t_center": b.t_center, "r": b.r}
                      for b in self.bumps],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RomSpec":
        try:
            coeffs = doc["coefficients"]
            exps = doc.get("exp", [0.0] * 4)
            sins = doc.get("sin", [0.0] * 4)
            funcs = tuple(
                AugmentedTimeFunction(TimePolynomial(c), float(e), float(s))
                for c, e, s in zip(coeffs, exps, sins, strict=True))
            bumps = tuple(HeavisideBump(float(b["m"]), float(b["n"]),
                                        float(b["t_center"]), float(b["r"]))
                          for b in doc.get("bumps", []))
            return cls(RomKind(int(doc["kind"])), funcs, bumps,
                       policy=doc.get("policy", "custom"))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed ROM document: {exc!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RomSpec":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Appendix coefficient tables, ascending powers of t.
_ROM1 = [
    [-2.689e3, -9.951e2, 28.37, -3.013e-1, 1.095e-3],
    [5.517e2, 2.01e2, -5.751, -6.111e-2, -2.222e-4],
    [-3.718e1, -1.347e1, 3.867e-1, -4.112e-3, 1.495e-5],
    [8.241e-1, 2.998e-1, -8.634e-3, 9.184e-5, -3.339e-7],
]
_ROM1_A3_PRINTED = 8.241e3

_ROM2 = [
    [2.318e3, -2.466e3, 1.338e2, -3.413, 4.612e-2,
     -3.393e-4, 1.376e-6, -3.538e-9, 6.869e-12],
    [-4.623e2, 4.992e2, -2.713e1, 6.918e-1, -9.339e-3,
     6.856e-5, -2.766e-7, 7.056e-10, -1.369e-12],
    [3.103e1, -3.353e1, 1.825, -4.652e-2, 6.28e-4,
     -4.608e-6, 1.858e-8, -4.734e-11, 9.191e-14],
    [-6.997e-1, 7.477e-1, -4.073e-2, 1.038e-3, -1.402e-5,
     1.031e-7, -4.168e-10, -1.068e-12, -2.073e-15],
]
_ROM2_EXP = [-2.307e3, -2.307e3, -3.087e1, 6.964e-1]
_ROM2_SIN = [1.342, -2.676, 1.796e-2, -4.048e-4]

_ROM2_T = [10, 15, 17.5, 19, 20, 21, 22.5, 25, 30, 32.5,
           35, 37.5, 50, 52.5, 55, 60, 62.5, 65, 70,
           75, 80, 85, 87.5, 90, 95, 100, 105,
           110, 112.5]
_ROM2_M = [0.1, 0.085, 0.05, -0.0125, 0.125, 0.1, -0.0125,
           0.085, -0.075, -0.085, 0.085, 0.125, -0.085,
           -0.01, -0.05, -0.075, -0.075, -0.025, -0.015,
           -0.15, -0.05, -0.05, -0.05, -0.15, -0.1,
           -0.085, -0.175, -0.05, 0.05]
_ROM2_N = [100.0] * 3 + [1000.0] * 26
_ROM2_R = [1, 1, 1, 0.5, 0.25, 0.5, 0.1, 0.25, 0.75, 0.02,
           0.01, 0.01, 0.25, 1.5, 1.75, 0.01, 0.01, 0.01, 0.01, 0.01,
           0.01, 0.01, 0.01, 0.025, 0.075, 0.01, 0.15,
           0.01, 0.01]

_ROM3 = [
    [7.913e2, -1.747e3, 2.089e1, 5.173, -3.234e-1, 9.397e-3,
     -1.613e-4, 1.727e-6, -1.134e-8, 4.183e-11, -6.627e-14],
    [-1.578e2, 3.557e2, -4.613, -1.093, 6.432e-2, -1.872e-3,
     3.215e-5, -3.442e-7, 2.261e-9, -8.337e-12, 1.321e-14],
    [1.059e1, -2.391e1, -3.136e-1, 6.835e-2, -4.316e-3, 1.256e-4,
     -2.158e-6, 2.311e-8, -1.517e-10, 5.597e-13, -8.868e-16],
    [-2.388e-1, 5.305e-1, -6.637e-3, -1.553e-3, 9.754e-5, -2.837e-6,
     4.871e-8, -5.215e-10, 3.425e-12, -1.263e-14, 2.001e-17],
]


def _rom2_b2_printed():
    # As printed the 6.28e-4 term carries t^6 and the t^4 slot is empty.
    c = list(_ROM2[2])
    c[6] = c[4] + c[6]
    c[4] = 0.0
    return c


def builtin_rom(kind, coefficients: str = "corrected") -> RomSpec:
    """Published ROM tables. ``coefficients`` selects the typo policy."""
    if coefficients not in COEFFICIENT_POLICIES:
        raise ValueError(f"coefficients must be one of {COEFFICIENT_POLICIES}")
    kind = RomKind(kind)
    printed = coefficients == "as-printed"
    if kind is RomKind.ROM1:
        table = [list(c) for c in _ROM1]
        if printed:
            table[3][0] = _ROM1_A3_PRINTED
        funcs = [AugmentedTimeFunction(TimePolynomial(c)) for c in table]
        return RomSpec(kind, funcs, policy=coefficients)
    if kind is RomKind.ROM2:
        table = [list(c) for c in _ROM2]
        if printed:
            table[2] = _rom2_b2_printed()
        funcs = [AugmentedTimeFunction(TimePolynomial(c), e, s)
                 for c, e, s in zip(table, _ROM2_EXP, _ROM2_SIN)]
        bumps = [HeavisideBump(m, n, float(tc), float(r))
                 for m, n, tc, r in zip(_ROM2_M, _ROM2_N, _ROM2_T, _ROM2_R)]
        return RomSpec(kind, funcs, bumps, policy=coefficients)
    funcs = [AugmentedTimeFunction(TimePolynomial(c)) for c in _ROM3]
    return RomSpec(kind, funcs, policy=coefficients)


def log_permeability_variable(t, k_fz):
    k = np.asarray(k_fz, dtype=float)
    if np.any(~(k > 0)):
        raise ValueError(f"k_fz must be > 0, got {k_fz}")
    return np.abs(np.log10(k)) + X_TIME_SHIFT * np.asarray(t, dtype=float)


# Double-double helpers. The tables span 1e-17..1e3 and the four terms of
# the template cancel by up to four orders of magnitude, so plain float
# Horner loses ~1e-10 relative accuracy; a (hi, lo) pair restores ~1e-30.
_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd_add(a, b):
    s, e = _two_sum(a[0], b[0])
    return _fast_two_sum(s, e + a[1] + b[1])


def _dd_mul(a, b):
    p, e = _two_prod(a[0], b[0])
    return _fast_two_sum(p, e + a[0] * b[1] + a[1] * b[0])


@functools.lru_cache(maxsize=4096)
def _decimal_pair(value: float):
    """(hi, lo) with hi + lo ≈ the shortest decimal literal that rounds to ``value``."""
    hi = float(value)
    if not math.isfinite(hi) or hi == 0.0:
        return hi, 0.0
    with decimal.localcontext() as ctx:
        ctx.prec = 40
        lo = float(decimal.Decimal(repr(hi)) - decimal.Decimal(hi))
    return hi, lo


def _x_pair(times: np.ndarray, k_fz: np.ndarray):
    if np.any(~(k_fz > 0)):
        raise ValueError(f"k_fz must be > 0, got {k_fz}")
    base_hi = np.empty_like(times)
    base_lo = np.empty_like(times)
    with decimal.localcontext() as ctx:
        ctx.prec = 40
        for k in np.unique(k_fz):
            base = abs(decimal.Decimal(float(k)).log10())
            sel = k_fz == k
            base_hi[sel] = hi = float(base)
            base_lo[sel] = float(base - decimal.Decimal(hi))
    zeros = np.zeros_like(times)
    shift = _decimal_pair(X_TIME_SHIFT)
    drift = _dd_mul((zeros + shift[0], zeros + shift[1]), (times, zeros))
    return _dd_add((base_hi, base_lo), drift)


def _dd_coefficient(f: AugmentedTimeFunction, t: np.ndarray):
    zeros = np.zeros_like(t)
    coeffs = [_decimal_pair(c) for c in f.polynomial.coeffs]
    acc = (zeros + coeffs[-1][0], zeros + coeffs[-1][1])
    t_dd = (t, zeros)
    for c in reversed(coeffs[:-1]):
        acc = _dd_add(_dd_mul(acc, t_dd), (zeros + c[0], zeros + c[1]))
    if f.exp_base_coeff:
        e = _decimal_pair(f.exp_base_coeff)
        acc = _dd_add(acc, _dd_mul((zeros + e[0], zeros + e[1]),
                                   (np.power(0.1, t), zeros)))
    if f.sin_coeff:
        s = _decimal_pair(f.sin_coeff)
        acc = _dd_add(acc, _dd_mul((zeros + s[0], zeros + s[1]), (np.sin(t), zeros)))
    return acc


def _evaluate(spec: RomSpec, t: np.ndarray, k_fz) -> np.ndarray:
    t, k = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(k_fz, dtype=float))
    t = np.ascontiguousarray(t)
    x = _x_pair(t, k)
    with np.errstate(over="ignore", invalid="ignore"):
        coeffs = [_dd_coefficient(f, t) for f in spec.coeff_functions]
        for i, c in enumerate(coeffs):
            if not np.all(np.isfinite(c[0]) & np.isfinite(c[1])):
                bad = int(np.flatnonzero(~(np.isfinite(c[0]) & np.isfinite(c[1])))[0])
                raise RomEvaluationError(
                    f"coefficient function {i} is not finite at time index {bad}",
                    term=i, time_index=bad)
        out = coeffs[3]
        for c in reversed(coeffs[:3]):
            out = _dd_add(_dd_mul(out, x), c)
        for bump in spec.bumps:
            out = _dd_add(out, (bump(t), np.zeros_like(t)))
        value = out[0] + out[1]
    if not np.all(np.isfinite(value)):
        bad = int(np.flatnonzero(~np.isfinite(value))[0])
        raise RomEvaluationError(f"ROM value is not finite at time index {bad}",
                                 term="sum", time_index=bad)
    return value


def eval_rom(spec: RomSpec, t: float, k_fz: float) -> float:
    """Power in MW at time ``t`` (days) and permeability ``k_fz`` (m²)."""
    if not t >= 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return float(_evaluate(spec, np.array([float(t)]), k_fz)[0])


def eval_rom_points(spec: RomSpec, times, k_fz) -> np.ndarray:
    """Vectorized :func:`eval_rom` over paired ``(t, k_fz)`` arrays."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(~(times >= 0)):
        raise ValueError("times must be >= 0")
    return _evaluate(spec, times, np.asarray(k_fz, dtype=float).reshape(-1))


def eval_rom_curve(spec: RomSpec, times, k_fz: float) -> TimeSeries:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise ValueError("eval_rom_curve needs at least one time")
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    return TimeSeries(times, _evaluate(spec, times, k_fz), Quantity.POWER_MW)
