"""Empirical phase-space measures, exact optimal transport and the weak-form residual.

Atoms live in R^{2d} as ``z = (x, v)`` with the unweighted Euclidean cost.
Equal atom counts are solved as a minimum-cost perfect assignment
(:func:`scipy.optimize.linear_sum_assignment`); unequal counts as a
transportation linear program solved to optimality by the HiGHS simplex
(:func:`scipy.optimize.linprog`).  An entropic (Sinkhorn) approximation is
available behind ``method="entropic"`` for large problems and is never used
on verification paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .dynamics import PhaseState, TrajectoryRecord
from .kernel import BallMassKernel, evaluate_phi

__all__ = [
    "EmpiricalMeasure",
    "TransportPlan",
    "optimal_plan",
    "w2",
    "w1",
    "pushforward",
    "moments",
    "SmoothTest",
    "time_profile",
    "phase_bump",
    "weak_form_residual",
]

ENTROPIC_MIN_ATOMS = 2048


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight atomic probability measure on phase space.

    Parameters
    ----------
    positions, velocities : (N, d) arrays
        Atom coordinates; each atom carries mass ``1/N``.
    """

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.positions, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if x.shape != v.shape or x.shape[0] < 1:
            raise ValueError("need N >= 1 atoms with matching position and velocity shapes")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @classmethod
    def from_state(cls, state: PhaseState) -> "EmpiricalMeasure":
        return cls(state.positions, state.velocities)

    @classmethod
    def from_atoms(cls, z, dim: int) -> "EmpiricalMeasure":
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return cls(z[:, :dim], z[:, dim:])

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def atoms(self) -> np.ndarray:
        """(N, 2d) phase-space points."""
        return np.hstack([self.positions, self.velocities])

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    @staticmethod
    def _diam(a):
        if a.shape[0] < 2:
            return 0.0
        d = a[:, None, :] - a[None, :, :]
        return float(np.sqrt((d * d).sum(-1)).max())

    @property
    def position_diameter(self) -> float:
        return self._diam(self.positions)

    @property
    def velocity_diameter(self) -> float:
        return self._diam(self.velocities)

    def integrate(self, g: Callable) -> float:
        """(1/N) sum_i g(z_i) for ``g`` acting on rows of :attr:`atoms`."""
        return float(np.mean(g(self.atoms)))


@dataclass
class TransportPlan:
    """Optimal coupling between two empirical measures.

    ``assignment[i]`` is the target atom of source atom ``i`` when the
    counts agree; otherwise ``coupling`` is a sparse ``(N, M)`` matrix.
    ``cost`` is the optimal value of the mean transport cost.
    """

    cost: float
    p: int
    assignment: np.ndarray | None = None
    coupling: sparse.csr_matrix | None = field(default=None, repr=False)

    def matrix(self, n: int, m: int) -> np.ndarray:
        if self.assignment is not None:
            out = np.zeros((n, n))
            out[np.arange(n), self.assignment] = 1.0 / n
            return out
        return self.coupling.toarray()

    def marginal_error(self, n: int, m: int) -> float:
        g = self.matrix(n, m)
        return float(max(np.abs(g.sum(1) - 1.0 / n).max(), np.abs(g.sum(0) - 1.0 / m).max()))


def _cost(a, b, p):
    d = a[:, None, :] - b[None, :, :]
    sq = (d * d).sum(-1)
    return sq if p == 2 else np.sqrt(sq)


def _transport_lp(c):
    # uniform marginals scaled to integers: rows sum to m, columns to n
    n, m = c.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([np.full(n, float(m)), np.full(m, float(n))])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transportation solver failed: {res.message}")
    gamma = res.x.reshape(n, m) / (n * m)
    gamma[gamma < 1e-15] = 0.0
    return float((gamma * c).sum()), sparse.csr_matrix(gamma)


def _sinkhorn(c, eps_final=1e-3, iters=200):
    # log-domain Sinkhorn with eps annealed from the cost scale down to eps_final
    n, m = c.shape
    la, lb = np.full(n, -np.log(n)), np.full(m, -np.log(m))
    f, g = np.zeros(n), np.zeros(m)
    scale = max(float(c.max()), 1e-300)
    for eps in np.geomspace(scale, eps_final * scale, 12):
        for _ in range(iters):
            f = -eps * logsumexp((g[None, :] - c) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - c) / eps + la[:, None], axis=0)
    logp = (f[:, None] + g[None, :] - c) / eps + la[:, None] + lb[None, :]
    gamma = np.exp(logp)
    return float((gamma * c).sum()), sparse.csr_matrix(gamma)


def optimal_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: int = 2, method: str = "exact") -> TransportPlan:
    """Optimal plan for the cost ``|z - z'|^p`` (p in {1, 2}).

    ``method="entropic"`` is accepted only when both measures have at least
    ``ENTROPIC_MIN_ATOMS`` atoms.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    c = _cost(mu.atoms, nu.atoms, p)
    n, m = c.shape
    if method == "entropic":
        if min(n, m) < ENTROPIC_MIN_ATOMS:
            raise ValueError(f"entropic transport is reserved for N >= {ENTROPIC_MIN_ATOMS}")
        cost, gamma = _sinkhorn(c)
        return TransportPlan(cost, p, coupling=gamma)
    if method != "exact":
        raise ValueError(f"unknown transport method {method!r}")
    if n == m:
        rows, cols = linear_sum_assignment(c)
        return TransportPlan(float(c[rows, cols].sum() / n), p, assignment=cols)
    cost, gamma = _transport_lp(c)
    return TransportPlan(cost, p, coupling=gamma)


def w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, method: str = "exact") -> float:
    """Quadratic Wasserstein distance between empirical measures."""
    return float(np.sqrt(max(optimal_plan(mu, nu, 2, method).cost, 0.0)))


def w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure, method: str = "exact") -> float:
    """1-Wasserstein distance between empirical measures."""
    return optimal_plan(mu, nu, 1, method).cost


def pushforward(mu: EmpiricalMeasure, transform: Callable) -> EmpiricalMeasure:
    """Image measure: ``transform`` maps (N, 2d) atoms to (N, 2d) atoms."""
    z = np.asarray(transform(mu.atoms), dtype=float)
    if z.shape != (mu.n, 2 * mu.dim):
        raise ValueError(f"map returned shape {z.shape}, expected {(mu.n, 2 * mu.dim)}")
    return EmpiricalMeasure.from_atoms(z, mu.dim)


def moments(mu: EmpiricalMeasure, at, kernel: BallMassKernel) -> tuple[float, np.ndarray]:
    """Smoothed local density and momentum at ``at``.

    Returns ``(1/N) sum_j phi(at - x_j)`` and ``(1/N) sum_j phi(at - x_j) v_j``.
    """
    at = np.asarray(at, dtype=float).reshape(1, mu.dim)
    phi = np.atleast_1d(evaluate_phi(kernel.spec, at - mu.positions))
    return float(phi.mean()), (phi[:, None] * mu.velocities).mean(axis=0)


# ---------------------------------------------------------------------------
# weak formulation


@dataclass(frozen=True)
class SmoothTest:
    """Test function psi(t, x, v) with its partial derivatives.

    Every callable takes ``(t, x, v)`` with ``x, v`` of shape (N, d) and
    returns values of shape (N,) (``value``, ``dt``) or (N, d) (``grad_x``,
    ``grad_v``).
    """

    value: Callable
    dt: Callable
    grad_x: Callable
    grad_v: Callable
    label: str = ""


def time_profile(t_final: float, label: str = "chi") -> SmoothTest:
    """psi = cos^2(pi t / (2T)): smooth in t, vanishing at T, constant in space."""
    k = np.pi / (2.0 * t_final)

    def value(t, x, v):
        return np.full(x.shape[0], np.cos(k * t) ** 2)

    def dt(t, x, v):
        return np.full(x.shape[0], -k * np.sin(2.0 * k * t))

    def zero(t, x, v):
        return np.zeros_like(x)

    return SmoothTest(value, dt, zero, zero, label)


def phase_bump(t_final: float, center_x, center_v, radius: float, label: str = "bump") -> SmoothTest:
    """psi = cos^2(pi t / (2T)) * (1 - |z - c|^2 / rho^2)^4 on the phase ball of radius rho."""
    cx = np.asarray(center_x, dtype=float)
    cv = np.asarray(center_v, dtype=float)
    k = np.pi / (2.0 * t_final)
    rho2 = float(radius) ** 2

    def _b(x, v):
        dx, dv = x - cx, v - cv
        u = 1.0 - ((dx * dx).sum(1) + (dv * dv).sum(1)) / rho2
        u = np.maximum(u, 0.0)
        return u, dx, dv

    def value(t, x, v):
        u, _, _ = _b(x, v)
        return np.cos(k * t) ** 2 * u**4

    def dt(t, x, v):
        u, _, _ = _b(x, v)
        return -k * np.sin(2.0 * k * t) * u**4

    def grad_x(t, x, v):
        u, dx, _ = _b(x, v)
        return (np.cos(k * t) ** 2 * 4.0 * u**3 * (-2.0 / rho2))[:, None] * dx

    def grad_v(t, x, v):
        u, _, dv = _b(x, v)
        return (np.cos(k * t) ** 2 * 4.0 * u**3 * (-2.0 / rho2))[:, None] * dv

    return SmoothTest(value, dt, grad_x, grad_v, label)


def weak_form_residual(traj: TrajectoryRecord, test: SmoothTest) -> float:
    """Absolute residual of the weak formulation along an atomic trajectory.

    Integrand ``(1/N) sum_i (d_t psi + v_i . grad_x psi + grad_v psi . a_i)``
    at each recorded time, where ``a_i`` is the recorded force at atom
    ``i``; composite trapezoid in time plus ``(1/N) sum_i psi(0, z_i(0))``.
    Positions must be unwrapped (Euclidean runs).
    """
    t = np.asarray(traj.times, dtype=float)
    vals = np.empty(t.shape[0])
    for k in range(t.shape[0]):
        x, v, a = traj.positions[k], traj.velocities[k], traj.accelerations[k]
        g = test.dt(t[k], x, v) + (v * test.grad_x(t[k], x, v)).sum(1) + (a * test.grad_v(t[k], x, v)).sum(1)
        vals[k] = g.mean()
    integral = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(t)))
    start = float(test.value(t[0], traj.positions[0], traj.velocities[0]).mean())
    return abs(integral + start)
