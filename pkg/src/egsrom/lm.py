"""Levenberg-Marquardt for small dense least-squares problems.

Classic Marquardt damping: the step solves

    min ||J d + r||² + lam ||D d||²,   D = diag(||J_j||)

so the iteration is invariant to the scaling of individual parameters.
The damped system is solved through an SVD of ``J D^-1`` instead of the
normal equations, which matters for the polynomial bases used by the ROMs
(monomials up to t^10 at t = 120).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class ResidualFailure(RuntimeError):
    """Raised by a residual function when a trial point cannot be evaluated."""


@dataclass
class LMOptions:
    lam0: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 10.0
    max_iter: int = 500
    ftol: float = 1e-10  # relative cost change, achieved or predicted
    gtol: float = 1e-8   # cosine between the residual and the Jacobian's column space
    max_rejections: int = 5
    # Stop once the cost falls this far below the initial cost (an exact fit
    # reached to round-off; further steps would only be rejected).
    cost_floor: float = 1e-20
    fd_step: float | np.ndarray = 1e-3


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    residual: np.ndarray
    jacobian: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    reason: str
    trace: list = field(default_factory=list)  # (x, cost) per accepted iterate

    def covariance(self) -> np.ndarray | None:
        """Gauss-Newton covariance estimate s² (JᵀJ)⁻¹ (unvalidated)."""
        m, n = self.jacobian.shape
        if m <= n:
            return None
        s2 = 2.0 * self.cost / (m - n)
        return s2 * np.linalg.pinv(self.jacobian.T @ self.jacobian)


def forward_difference(fun, x, r0, step):
    step = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xp[j] += step[j]
        jac[:, j] = (fun(xp) - r0) / step[j]
    return jac


def _cost(r):
    return 0.5 * float(r @ r)


def levenberg_marquardt(fun: Callable, x0, jac: Callable | None = None, bounds=None,
                        options: LMOptions | None = None,
                        jac_fd: Callable | None = None) -> LMResult:
    """Minimize ``0.5 ||fun(x)||²``.

    ``jac(x)`` returns the Jacobian; without it forward differences with
    ``options.fd_step`` are used (``jac_fd(x, r0)`` may override that, e.g.
    to evaluate columns concurrently). ``bounds`` is ``(lo, hi)``; trial
    points are clipped into the box. A residual function that raises
    :class:`ResidualFailure` counts as a rejected step.
    """
    opts = options or LMOptions()
    x = np.array(x0, dtype=float)
    lo, hi = (np.full(x.size, -np.inf), np.full(x.size, np.inf)) if bounds is None else (
        np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("initial guess outside bounds")

    r = np.asarray(fun(x), dtype=float)
    evaluations = 1
    if not np.all(np.isfinite(r)):
        raise ValueError("residual not finite at the initial guess")
    if r.size < x.size:
        raise ValueError(f"under-determined: {x.size} parameters, {r.size} residuals")
    cost = initial_cost = _cost(r)
    trace = [(x.copy(), cost)]

    def jacobian(x, r):
        if jac is not None:
            return np.asarray(jac(x), dtype=float)
        if jac_fd is not None:
            return jac_fd(x, r)
        return forward_difference(fun, x, r, opts.fd_step)

    if cost == 0.0:
        return LMResult(x, cost, initial_cost, r, jacobian(x, r), 0, evaluations, True,
                        "zero residual", trace)

    J = jacobian(x, r)
    lam = opts.lam0
    rejections = 0
    iterations = 0
    converged, reason = False, "maximum iterations reached"
    while iterations < opts.max_iter:
        col_norm = np.linalg.norm(J, axis=0)
        scale = np.where(col_norm > 0, col_norm, 1.0)
        r_norm = np.sqrt(2.0 * cost)
        if r_norm == 0.0:
            converged, reason = True, "zero residual"
            break
        u, s, vt = np.linalg.svd(J / scale, full_matrices=False)
        ur = u.T @ r
        # Projection onto the whole column space, not column by column: with
        # nearly collinear columns every single-column cosine can be tiny
        # while a Gauss-Newton step would still cut the cost noticeably.
        rank = s > s[0] * max(J.shape) * np.finfo(float).eps if s.size else s > 0
        ur_norm = float(np.linalg.norm(ur[rank]))
        if ur_norm <= opts.gtol * r_norm:
            converged, reason = True, "gradient tolerance"
            break
        # An undamped Gauss-Newton step would remove at most 0.5 ||ur||²; if a
        # trial fails while that is below ftol of the cost, we are at round-off.
        negligible = 0.5 * ur_norm ** 2 <= opts.ftol * cost
        accepted = False
        while rejections < opts.max_rejections:
            step = -(vt.T @ (s / (s * s + lam) * ur)) / scale
            x_new = np.clip(x + step, lo, hi)
            iterations += 1
            try:
                r_new = np.asarray(fun(x_new), dtype=float)
                evaluations += 1
                ok = np.all(np.isfinite(r_new))
            except ResidualFailure as exc:
                log.debug("trial point rejected: %s", exc)
                evaluations += 1
                ok = False
            new_cost = _cost(r_new) if ok else np.inf
            if new_cost < cost:
                accepted = True
                rejections = 0
                lam /= opts.lam_down
                break
            rejections += 1
            if negligible:
                break
            lam *= opts.lam_up
            if iterations >= opts.max_iter:
                break
        if not accepted:
            if negligible:
                converged, reason = True, "predicted cost reduction"
            elif rejections >= opts.max_rejections:
                reason = f"{opts.max_rejections} consecutive rejected steps"
            break
        change = (cost - new_cost) / cost
        x, r, cost = x_new, r_new, new_cost
        trace.append((x.copy(), cost))
        if cost == 0.0:
            converged, reason = True, "zero residual"
            break
        if change < opts.ftol:
            converged, reason = True, "relative cost change"
            break
        if cost <= opts.cost_floor * initial_cost:
            converged, reason = True, "cost at round-off floor"
            break
        J = jacobian(x, r)

    return LMResult(x, cost, initial_cost, r, J, iterations, evaluations, converged,
                    reason, trace)
