"""Fuzzy q-closest alignment dynamics.

Each particle ``i`` looks at the ball ``B(x_i, R_i)`` whose radius is chosen
so that the blurred particles (self included) deposit total mass ``q`` in it.
The share of particle ``j`` in that ball,

    theta_ij = K(|x_i - x_j|, R_i) / q,

is a row-stochastic weight and the velocity relaxes towards the weighted
average:

    dx_i/dt = v_i,        dv_i/dt = -sum_j theta_ij (v_i - v_j).

Two fixed-step integrators are provided: classical RK4 with the weights
recomputed at every stage, and the convex (semi-implicit in structure)
Euler step ``v <- (1 - dt) v + dt theta v`` which keeps every new velocity in
the convex hull of the old ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import DomainGeometry, _dist
from .kernel import BallMassKernel, _ball_mass_scalar
from .radius import STATUS_CAPPED, TOL_MASS, TargetExceedsTotalMass, _solve

__all__ = [
    "PhaseState",
    "InteractionWeights",
    "InvalidStep",
    "FuzzyModel",
    "TrajectoryRecord",
    "compute_weights",
    "force",
    "step_rk4",
    "step_convex_euler",
    "integrate",
    "simulate",
    "support_directions",
    "trajectory_diagnostics",
    "record_mask",
]


class InvalidStep(ValueError):
    """Step size outside the range where the scheme keeps its structure."""


@dataclass
class PhaseState:
    """Positions and velocities of ``N`` particles in R^d at one instant."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape or x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} must both be (N, d) with N >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("phase state contains non-finite entries")
        self.positions = np.ascontiguousarray(x)
        self.velocities = np.ascontiguousarray(v)
        self.time = float(self.time)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "PhaseState":
        return PhaseState(self.positions.copy(), self.velocities.copy(), self.time)


@dataclass
class InteractionWeights:
    """Row-stochastic interaction matrix together with the perception radii."""

    theta: np.ndarray
    radii: np.ndarray
    status: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.status is None:
            self.status = np.zeros(self.radii.shape[0], dtype=np.int64)

    def row_sums(self) -> np.ndarray:
        return self.theta.sum(axis=1)

    @property
    def capped(self) -> int:
        """Number of rows whose radius hit the torus cap (rows renormalized)."""
        return int(np.count_nonzero(self.status == STATUS_CAPPED))


@njit(cache=True)
def _fuzzy_weights(kp, x, period, q, rcap, hint_x, hint_r, use_hint):
    n = x.shape[0]
    theta = np.zeros((n, n))
    radii = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    dists = np.empty(n)
    ones = np.ones(n)
    shift = 0.0
    if use_hint:
        for j in range(n):
            d = _dist(x, j, hint_x, j, period)
            if d > shift:
                shift = d
    for i in range(n):
        for j in range(n):
            dists[j] = _dist(x, i, x, j, period)
        lo0 = -1.0
        hi0 = -1.0
        if use_hint and hint_r[i] > 0.0:
            # moving every point by at most `shift` moves R by at most 2*shift
            pad = 2.0 * shift + 1e-13 * (1.0 + hint_r[i])
            lo0 = max(hint_r[i] - pad, 0.0)
            hi0 = hint_r[i] + pad
        r, st = _solve(kp, dists, ones, q, rcap, lo0, hi0)
        radii[i] = r
        status[i] = st
        total = 0.0
        for j in range(n):
            k = _ball_mass_scalar(kp, dists[j], r)
            theta[i, j] = k
            total += k
        scale = total if st == 2 else q
        for j in range(n):
            theta[i, j] /= scale
    return theta, radii, status


@njit(cache=True)
def _alignment_core(theta, v):
    n, d = v.shape
    out = np.zeros((n, d))
    for i in range(n):
        row = 0.0
        for j in range(n):
            t = theta[i, j]
            if t != 0.0:
                row += t
                for k in range(d):
                    out[i, k] += t * v[j, k]
        for k in range(d):
            out[i, k] -= row * v[i, k]
    return out


@njit(cache=True)
def _wrap_core(x, period):
    if period > 0.0:
        return x - period * np.floor(x / period)
    return x


@njit(cache=True)
def _support(v, dirs):
    m = dirs.shape[0]
    out = np.full(m, -np.inf)
    for a in range(m):
        for i in range(v.shape[0]):
            acc = 0.0
            for k in range(v.shape[1]):
                acc += v[i, k] * dirs[a, k]
            if acc > out[a]:
                out[a] = acc
    return out


@njit(cache=True)
def _run_core(kp, x0, v0, steps, record, period, q, rcap, scheme, dirs, store_weights):
    """Fixed-step time loop.  ``scheme`` 0 = RK4, 1 = convex Euler.

    Returns recorded (x, v, a, radii, theta, weight_change) at the steps
    flagged in ``record`` (length len(steps) + 1), the worst per-step growth
    of the velocity support function and the number of capped radius solves.
    """
    n, d = x0.shape
    nrec = 0
    for k in range(record.shape[0]):
        if record[k]:
            nrec += 1
    xs = np.empty((nrec, n, d))
    vs = np.empty((nrec, n, d))
    acc = np.empty((nrec, n, d))
    rs = np.empty((nrec, n))
    ws = np.empty((nrec if store_weights else 0, n, n))
    change = np.zeros(nrec)
    x = _wrap_core(x0.copy(), period)
    v = v0.copy()
    hx = x.copy()
    hr = np.zeros(n)
    use = False
    step_hull = -np.inf
    capped = 0
    prev_theta = np.zeros((n, n))
    slot = 0
    nsteps = steps.shape[0]
    for k in range(nsteps + 1):
        theta, radii, status = _fuzzy_weights(kp, x, period, q, rcap, hx, hr, use)
        hx = x
        hr = radii
        use = True
        for i in range(n):
            if status[i] == 2:
                capped += 1
        a = _alignment_core(theta, v)
        if record[k]:
            xs[slot] = x
            vs[slot] = v
            acc[slot] = a
            rs[slot] = radii
            if store_weights:
                ws[slot] = theta
            if slot > 0:
                change[slot] = np.abs(theta - prev_theta).max()
            prev_theta = theta
            slot += 1
        if k == nsteps:
            break
        h = steps[k]
        if scheme == 0:
            k2x = v + 0.5 * h * a
            hx = _wrap_core(x + 0.5 * h * v, period)
            th, hr, st = _fuzzy_weights(kp, hx, period, q, rcap, x, radii, True)
            k2v = _alignment_core(th, k2x)
            k3x = v + 0.5 * h * k2v
            xs3 = _wrap_core(x + 0.5 * h * k2x, period)
            th, hr, st = _fuzzy_weights(kp, xs3, period, q, rcap, hx, hr, True)
            hx = xs3
            k3v = _alignment_core(th, k3x)
            k4x = v + h * k3v
            xs4 = _wrap_core(x + h * k3x, period)
            th, hr, st = _fuzzy_weights(kp, xs4, period, q, rcap, hx, hr, True)
            hx = xs4
            k4v = _alignment_core(th, k4x)
            x_new = x + h / 6.0 * (v + 2.0 * k2x + 2.0 * k3x + k4x)
            v_new = v + h / 6.0 * (a + 2.0 * k2v + 2.0 * k3v + k4v)
        else:
            v_new = (1.0 - h) * v + h * (theta @ v)
            x_new = x + h * v
        grow = (_support(v_new, dirs) - _support(v, dirs)).max()
        if grow > step_hull:
            step_hull = grow
        x = _wrap_core(x_new, period)
        v = v_new
    return xs, vs, acc, rs, ws, change, step_hull, capped


class FuzzyModel:
    """Right-hand side of the fuzzy system for fixed kernel, geometry and ``q``.

    The last evaluated positions and radii are kept as a warm start for the
    next radius solve; results do not depend on it beyond rounding.
    """

    variant = "fuzzy"

    def __init__(self, kernel: BallMassKernel, geometry: DomainGeometry, q: float):
        if geometry.dim != kernel.dim:
            raise ValueError("kernel and geometry dimensions differ")
        geometry.check_kernel(kernel.sigma)
        if not q > 0:
            raise ValueError(f"q must be positive, got {q}")
        self.kernel = kernel
        self.geometry = geometry
        self.q = float(q)
        self._hint = None

    def reset(self):
        self._hint = None

    def weights(self, positions) -> InteractionWeights:
        x = np.ascontiguousarray(positions, dtype=float)
        n = x.shape[0]
        if self.q > n + TOL_MASS:
            raise TargetExceedsTotalMass(f"q = {self.q} exceeds the number of particles {n}")
        q = min(self.q, float(n))
        if self._hint is not None and self._hint[0].shape == x.shape:
            hx, hr, use = self._hint[0], self._hint[1], True
        else:
            hx, hr, use = x, np.zeros(n), False
        theta, radii, status = _fuzzy_weights(
            self.kernel.params, x, self.geometry.period_value, q, self.geometry.radius_cap, hx, hr, use
        )
        self._hint = (x.copy(), radii)
        return InteractionWeights(theta, radii, status)

    def acceleration(self, positions, velocities):
        w = self.weights(positions)
        return _alignment(w.theta, velocities), w


def _alignment(theta, v):
    # -sum_j theta_ij (v_i - v_j)
    return theta @ v - theta.sum(axis=1)[:, None] * v


def compute_weights(state: PhaseState, kernel: BallMassKernel, geometry: DomainGeometry, q: float) -> InteractionWeights:
    """Perception radii and interaction matrix for ``state``."""
    if not 0 < q <= state.n + TOL_MASS:
        if q > state.n:
            raise TargetExceedsTotalMass(f"q = {q} exceeds N = {state.n}")
        raise ValueError(f"q must be positive, got {q}")
    return FuzzyModel(kernel, geometry, q).weights(state.positions)


def force(state: PhaseState, weights: InteractionWeights) -> np.ndarray:
    """Alignment acceleration ``-sum_j theta_ij (v_i - v_j)`` for every particle."""
    return _alignment(weights.theta, state.velocities)


def _rk4(model, x, v, dt, a0):
    k1x, k1v = v, a0
    k2x = v + 0.5 * dt * k1v
    k2v, _ = model.acceleration(x + 0.5 * dt * k1x, k2x)
    k3x = v + 0.5 * dt * k2v
    k3v, _ = model.acceleration(x + 0.5 * dt * k2x, k3x)
    k4x = v + dt * k3v
    k4v, _ = model.acceleration(x + dt * k3x, k4x)
    x_new = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x_new, v_new


def _convex_euler(x, v, dt, theta):
    v_new = (1.0 - dt) * v + dt * (theta @ v)
    return x + dt * v, v_new


def step_rk4(state: PhaseState, dt: float, model) -> PhaseState:
    """One classical Runge-Kutta step, weights recomputed at each stage."""
    if not dt > 0:
        raise InvalidStep(f"dt must be positive, got {dt}")
    a0, _ = model.acceleration(state.positions, state.velocities)
    x, v = _rk4(model, state.positions, state.velocities, dt, a0)
    return PhaseState(model.geometry.wrap(x), v, state.time + dt)


def step_convex_euler(state: PhaseState, dt: float, model: FuzzyModel) -> PhaseState:
    """``v <- (1 - dt) v + dt theta v`` and ``x <- x + dt v`` (old velocity)."""
    if not 0 < dt < 1:
        raise InvalidStep(f"the convex Euler step needs 0 < dt < 1, got {dt}")
    w = model.weights(state.positions)
    x, v = _convex_euler(state.positions, state.velocities, dt, w.theta)
    return PhaseState(model.geometry.wrap(x), v, state.time + dt)


_DIRECTIONS: dict = {}


def support_directions(dim: int, count: int = 64) -> np.ndarray:
    """Fixed pseudo-random unit vectors used for support-function hull tests."""
    key = (dim, count)
    if key not in _DIRECTIONS:
        u = np.random.default_rng(12345).normal(size=(count, dim))
        _DIRECTIONS[key] = u / np.linalg.norm(u, axis=1, keepdims=True)
    return _DIRECTIONS[key]


@dataclass
class TrajectoryRecord:
    """Strided time series of states with per-record diagnostics.

    ``diagnostics`` maps names to arrays aligned with ``times``:
    ``D_x``, ``D_v``, ``max_speed``, ``max_accel``, ``hull_violation``,
    ``weight_change`` and ``radius_excess`` (``max_i R_i - (D_x + sigma)``,
    NaN for the classical system).
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    radii: np.ndarray | None
    weights: np.ndarray | None
    diagnostics: dict
    step_hull_violation: float = 0.0
    capped_radii: int = 0
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return self.times.shape[0]

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.positions[k], self.velocities[k], self.times[k])

    def final_state(self) -> PhaseState:
        return self.state(-1)


def trajectory_diagnostics(geometry: DomainGeometry, positions, velocities, accelerations, radii=None, sigma=None) -> dict:
    """Per-record diagnostic series for stacked ``(K, N, d)`` trajectories.

    The hull violation is measured against the support function of the
    first recorded velocities over :func:`support_directions`.
    """
    dirs = support_directions(velocities.shape[2])
    flat = DomainGeometry("euclidean", velocities.shape[2])
    support = np.einsum("knd,md->knm", velocities, dirs).max(axis=1)
    out = dict(
        D_x=np.array([geometry.diameter(x) for x in positions]),
        D_v=np.array([flat.diameter(v) for v in velocities]),
        max_speed=np.linalg.norm(velocities, axis=2).max(axis=1),
        max_accel=np.linalg.norm(accelerations, axis=2).max(axis=1),
        hull_violation=(support - support[0]).max(axis=1),
    )
    if radii is not None:
        out["radius_excess"] = radii.max(axis=1) - (out["D_x"] + sigma)
    else:
        out["radius_excess"] = np.full(positions.shape[0], np.nan)
    return out


def _step_schedule(t_final, dt):
    if not dt > 0:
        raise InvalidStep(f"dt must be positive, got {dt}")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    n = int(math.floor(t_final / dt + 1e-9))
    steps = np.full(n, float(dt))
    rest = t_final - n * dt
    if rest > 1e-12 * max(1.0, t_final):
        steps = np.append(steps, rest)
    # recorded times t0 + k dt, the last one pinned to t_final
    times = np.minimum(np.arange(steps.shape[0] + 1) * float(dt), t_final)
    return steps, times


def record_mask(nsteps: int, stride: int) -> np.ndarray:
    """Every ``stride``-th step plus the final state."""
    mask = np.zeros(nsteps + 1, dtype=np.bool_)
    mask[:: max(1, int(stride))] = True
    mask[-1] = True
    return mask


def integrate(
    model: FuzzyModel,
    state: PhaseState,
    dt: float,
    t_final: float,
    scheme: str = "rk4",
    stride: int = 10,
    store_weights: bool = False,
) -> TrajectoryRecord:
    """Advance the fuzzy system from ``state`` for ``t_final`` time units.

    A short last step is taken when ``t_final`` is not a multiple of ``dt``.
    Weights are recomputed at every RK4 stage.
    """
    codes = {"rk4": 0, "convex_euler": 1}
    if scheme not in codes:
        raise ValueError(f"unknown fuzzy integrator {scheme!r}")
    if state.dim != model.kernel.dim:
        raise ValueError("state dimension does not match the model")
    if model.q > state.n + TOL_MASS:
        raise TargetExceedsTotalMass(f"q = {model.q} exceeds the number of particles {state.n}")
    steps, times = _step_schedule(t_final, dt)
    if scheme == "convex_euler" and np.any(steps >= 1.0):
        raise InvalidStep(f"the convex Euler step needs 0 < dt < 1, got {dt}")
    mask = record_mask(steps.shape[0], stride)
    geo = model.geometry
    xs, vs, acc, rs, ws, change, step_hull, capped = _run_core(
        model.kernel.params,
        state.positions,
        state.velocities,
        steps,
        mask,
        geo.period_value,
        min(model.q, float(state.n)),
        geo.radius_cap,
        codes[scheme],
        support_directions(state.dim),
        bool(store_weights),
    )
    diagnostics = trajectory_diagnostics(geo, xs, vs, acc, rs, model.kernel.sigma)
    diagnostics["weight_change"] = change
    meta = dict(variant="fuzzy", scheme=scheme, dt=float(dt), t_final=float(t_final), q=model.q, stride=int(stride))
    return TrajectoryRecord(
        times=state.time + times[mask],
        positions=xs,
        velocities=vs,
        accelerations=acc,
        radii=rs,
        weights=ws if store_weights else None,
        diagnostics=diagnostics,
        step_hull_violation=float(step_hull) if steps.shape[0] else 0.0,
        capped_radii=int(capped),
        meta=meta,
    )


def simulate(scenario) -> TrajectoryRecord:
    """Run a fuzzy scenario end to end (see :mod:`qclosest.scenario`)."""
    from .scenario import build_model, initial_state

    if scenario.model.variant != "fuzzy":
        raise ValueError("simulate() runs the fuzzy system; use classical.simulate_classical for the classical one")
    model = build_model(scenario)
    state = initial_state(scenario)
    integ = scenario.integrator
    return integrate(model, state, integ.dt, integ.t_final, integ.scheme, scenario.output.stride)
