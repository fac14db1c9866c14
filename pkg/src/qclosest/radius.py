"""Perception radius: the smallest ball around a point that captures a given
amount of mollified mass.

For weighted sources ``(y_j, w_j)`` and target level ``q`` the radius at
``x`` is

    R(x) = inf { r > 0 : sum_j w_j K(|x - y_j|, r) >= q }.

The aggregate mass is continuous and nondecreasing in ``r``.  The root is
bracketed from the order statistics of the source distances (the bracket has
width at most ``2 sigma``) and refined by safeguarded Newton steps (the
r-derivative of the ball mass comes out of the same quadrature) that keep
``mass(lo) < q <= mass(hi)``; convergence is therefore always towards the
infimum, including on plateaus where the mass sits exactly at the target
level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import DomainGeometry, _dist
from .kernel import BallMassKernel, _ball_mass_eval

__all__ = [
    "TOL_R",
    "TOL_MASS",
    "STATUS_OK",
    "STATUS_SATURATED",
    "STATUS_CAPPED",
    "TargetExceedsTotalMass",
    "RadiusProblem",
    "aggregate_mass",
    "solve_radius",
    "solve_radius_status",
]

TOL_R = 1e-10
TOL_MASS = 1e-8

STATUS_OK = 0
# target equals the total mass: the radius is max distance + sigma
STATUS_SATURATED = 1
# torus only: the level is not reached below half the period
STATUS_CAPPED = 2


class TargetExceedsTotalMass(ValueError):
    """The requested mass exceeds the total source mass (eta > 1 or q > N)."""


@njit(cache=True)
def _active_set(dists, w, lo, hi, sigma, idx):
    # sources fully inside every ball with radius >= lo are folded into base
    base = 0.0
    nact = 0
    for j in range(dists.shape[0]):
        s = dists[j]
        if s + sigma <= lo:
            base += w[j]
        elif s < hi + sigma:
            idx[nact] = j
            nact += 1
    return base, nact


@njit(cache=True)
def _excess(kp, dists, w, idx, nact, base, target, r):
    """mass(r) - target and d mass / dr.

    Summed so that small deficits near saturation survive rounding.
    """
    whole = base - target
    small = 0.0
    slope = 0.0
    for k in range(nact):
        j = idx[k]
        inside, outside, d = _ball_mass_eval(kp, dists[j], r)
        if inside > 0.5:
            whole += w[j]
            small -= w[j] * outside
        else:
            small += w[j] * inside
        slope += w[j] * d
    return whole + small, slope


@njit(cache=True)
def _cold_bracket(kp, dists, w, target, rcap, idx):
    # the target is reached between the order statistics s_m - sigma and s_m + sigma
    sigma = kp[1]
    n = dists.shape[0]
    order = np.argsort(dists)
    cum = 0.0
    sm = dists[order[n - 1]]
    for k in range(n):
        j = order[k]
        cum += w[j]
        if cum >= target:
            sm = dists[j]
            break
    lo = max(0.0, sm - sigma)
    hi = min(sm + sigma, rcap)
    return lo, hi


@njit(cache=True)
def _solve(kp, dists, w, target, rcap, lo0, hi0):
    """Infimum radius plus status; ``lo0 < hi0`` is a trusted bracket hint.

    Safeguarded Newton: every evaluation shrinks a bracket with
    ``mass(lo) < target <= mass(hi)``; Newton proposals leaving it, or
    stalling, are replaced by bisection.  The returned value is the right
    end of a bracket of relative width below 4e-15.
    """
    sigma = kp[1]
    n = dists.shape[0]
    total = 0.0
    smax = 0.0
    for j in range(n):
        total += w[j]
        if dists[j] > smax:
            smax = dists[j]
    if target >= total * (1.0 - 1e-13):
        big = smax + sigma
        if big >= rcap:
            return rcap, 2
        return big, 1

    idx = np.empty(n, dtype=np.int64)
    hinted = lo0 >= 0.0 and hi0 > lo0 and lo0 < rcap
    if hinted:
        lo = lo0
        hi = min(hi0, rcap)
        x = 0.5 * (lo + hi)
        lo_ok = lo == 0.0
        hi_ok = False
        base, nact = _active_set(dists, w, lo, hi, sigma, idx)
    else:
        lo, hi = _cold_bracket(kp, dists, w, target, rcap, idx)
        if hi <= lo:
            return rcap, 2
        base, nact = _active_set(dists, w, lo, hi, sigma, idx)
        fhi, dhi = _excess(kp, dists, w, idx, nact, base, target, hi)
        if fhi < 0.0:
            return rcap, 2
        flo, dlo = _excess(kp, dists, w, idx, nact, base, target, lo)
        if flo >= 0.0:
            return lo, 0
        lo_ok = True
        hi_ok = True
        # first Newton step from the better-conditioned end
        x = hi - fhi / dhi if dhi > 0.0 else 0.5 * (lo + hi)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)

    checkpoint = hi - lo
    for it in range(200):
        fx, dx = _excess(kp, dists, w, idx, nact, base, target, x)
        if fx >= 0.0 and dx == 0.0:
            # no source straddles the sphere: the mass is flat back to the last
            # radius where a source became fully contained
            edge = 0.0
            for j in range(n):
                t = dists[j] + sigma
                if edge < t <= x:
                    edge = t
            if edge <= lo:
                if hinted:
                    return _solve(kp, dists, w, target, rcap, -1.0, -1.0)
                edge = x
            x = edge
            if fx == 0.0:
                # level attained exactly at a containment edge: the mass drops below it
                hi = x
                lo = x
                hi_ok = True
                lo_ok = True
                break
        if fx >= 0.0:
            hi = x
            hi_ok = True
        else:
            lo = x
            lo_ok = True
        width = hi - lo
        wtol = 4e-15 * hi + 1e-300
        if width <= wtol:
            break
        step = -fx / dx if dx > 0.0 else math.inf
        if abs(step) < 0.5 * wtol:
            # converged: overshoot slightly to close the bracket from the other side
            xn = x + step + (0.25 * wtol if fx < 0.0 else -0.25 * wtol)
        else:
            xn = x + step
        if it % 3 == 2:
            if width > 0.5 * checkpoint:
                xn = math.nan
            checkpoint = width
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn

    if not (lo_ok and hi_ok):
        # the hint was not confirmed on one side: check it, else start cold
        good = True
        if not hi_ok:
            good = _excess(kp, dists, w, idx, nact, base, target, hi)[0] >= 0.0
        if good and not lo_ok:
            good = _excess(kp, dists, w, idx, nact, base, target, lo)[0] < 0.0
        if not good:
            return _solve(kp, dists, w, target, rcap, -1.0, -1.0)
    if hi >= rcap:
        return rcap, 2
    return hi, 0


@njit(cache=True)
def _distances_from(center, sources, period):
    c = center.reshape(1, -1)
    out = np.empty(sources.shape[0])
    for j in range(sources.shape[0]):
        out[j] = _dist(c, 0, sources, j, period)
    return out


@dataclass
class RadiusProblem:
    """Radius query at ``center`` against weighted point sources."""

    center: np.ndarray
    sources: np.ndarray
    target: float
    kernel: BallMassKernel
    weights: np.ndarray | None = None
    geometry: DomainGeometry | None = field(default=None)

    def __post_init__(self):
        d = self.kernel.dim
        self.center = np.asarray(self.center, dtype=float).reshape(d)
        self.sources = np.ascontiguousarray(np.asarray(self.sources, dtype=float).reshape(-1, d))
        if self.weights is None:
            self.weights = np.ones(self.sources.shape[0])
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.weights.shape != (self.sources.shape[0],):
            raise ValueError("need one weight per source")
        if np.any(self.weights <= 0):
            raise ValueError("source weights must be positive")
        if self.geometry is None:
            self.geometry = DomainGeometry("euclidean", d)
        elif self.geometry.dim != d:
            raise ValueError("geometry and kernel dimensions differ")
        self.geometry.check_kernel(self.kernel.sigma)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def distances(self) -> np.ndarray:
        return _distances_from(self.center, self.sources, self.geometry.period_value)


def aggregate_mass(problem: RadiusProblem, r: float) -> float:
    """sum_j w_j K(dist(center, y_j), r)."""
    if r <= 0:
        return 0.0
    d = problem.distances()
    return float(np.dot(problem.weights, problem.kernel(d, np.full_like(d, r))))


def solve_radius_status(problem: RadiusProblem) -> tuple[float, int]:
    """Radius plus a status code (``STATUS_OK``, ``STATUS_SATURATED``, ``STATUS_CAPPED``)."""
    if not problem.target > 0:
        raise ValueError(f"target must be positive, got {problem.target}")
    total = problem.total_mass
    if problem.target > total + TOL_MASS:
        raise TargetExceedsTotalMass(f"target {problem.target} exceeds total source mass {total}")
    R, status = _solve(
        problem.kernel.params,
        problem.distances(),
        problem.weights,
        float(min(problem.target, total)),
        problem.geometry.radius_cap,
        -1.0,
        -1.0,
    )
    return float(R), int(status)


def solve_radius(problem: RadiusProblem) -> float:
    """Infimum radius at which the aggregate mass reaches the target."""
    return solve_radius_status(problem)[0]

