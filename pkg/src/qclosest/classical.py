"""The original (sharp) q-closest alignment system.

    dx_i/dt = v_i,      dv_i/dt = -(1/q) sum_{j in N_i} psi(|x_i - x_j|) (v_i - v_j)

``N_i`` collects the ``q`` nearest other particles.  Distance ties at the
cutoff are resolved by a :class:`TieRule`:

* ``lowest_index`` keeps the tied particles with the smallest indices so that
  ``#N_i = q`` exactly;
* ``inclusive`` admits the whole tied group and divides by ``#N_i`` instead
  of ``q``.

With ``rank_self=True`` the particle itself takes one of the ``q`` rank
slots (it sits at distance zero), so ``N_i`` holds the ``q - 1`` nearest
others while the prefactor stays ``1/q``.  This is the convention under
which the two-cluster configuration with a particle in the middle
bifurcates (the middle particle follows exactly one cluster at rate 1/2).

The right-hand side is piecewise constant in the neighbor structure, so
solutions need not be unique; the integrators here compute *one* selection
by freezing neighbor sets over each step and log every switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    InvalidStep,
    PhaseState,
    TrajectoryRecord,
    _step_schedule,
    record_mask,
    support_directions,
    trajectory_diagnostics,
)
from .geometry import DomainGeometry

__all__ = [
    "TIE_RULES",
    "TieRule",
    "CommWeight",
    "SwitchEvent",
    "ClassicalModel",
    "neighbor_set",
    "classical_rhs",
    "classical_integrate",
    "simulate_classical",
    "GapTable",
    "instability_gap",
    "loglog_slope",
]

TIE_RULES = ("lowest_index", "inclusive")
# relative tolerance under which two distances count as tied
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TieRule:
    kind: str = "lowest_index"

    def __post_init__(self):
        if self.kind not in TIE_RULES:
            raise ValueError(f"unknown tie rule {self.kind!r}; expected one of {TIE_RULES}")


@dataclass(frozen=True)
class CommWeight:
    """Communication weight psi(s).

    ``kind`` is ``"constant_one"`` or ``"custom_profile"``; profiles are
    ``"cs:<beta>"`` for ``(1 + s^2)^(-beta/2)`` and ``"exp:<ell>"`` for
    ``exp(-s/ell)``.  Both are bounded by 1, nonincreasing and vanish at
    infinity.
    """

    kind: str = "constant_one"
    profile: str | None = None

    def __post_init__(self):
        if self.kind == "constant_one":
            if self.profile is not None:
                raise ValueError("constant_one takes no profile")
        elif self.kind == "custom_profile":
            self._parse()
        else:
            raise ValueError(f"unknown communication weight kind {self.kind!r}")

    def _parse(self):
        try:
            name, value = str(self.profile).split(":")
            value = float(value)
        except ValueError:
            raise ValueError(f"bad weight profile {self.profile!r}; expected 'cs:<beta>' or 'exp:<ell>'") from None
        if name not in ("cs", "exp") or not value > 0:
            raise ValueError(f"bad weight profile {self.profile!r}; expected 'cs:<beta>' or 'exp:<ell>' with a positive value")
        return name, value

    @classmethod
    def parse(cls, text: str) -> "CommWeight":
        """``"constant_one"`` or a profile string such as ``"cs:0.5"``."""
        text = text.strip()
        if text == "constant_one":
            return cls()
        return cls("custom_profile", text)

    def describe(self) -> str:
        return "constant_one" if self.kind == "constant_one" else str(self.profile)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant_one":
            return np.ones_like(s)
        name, value = self._parse()
        if name == "cs":
            return (1.0 + s * s) ** (-0.5 * value)
        return np.exp(-s / value)


@dataclass
class SwitchEvent:
    """Neighbor-structure event for ``particle`` at the start of a step.

    ``kind == "switch"``: the set changed from ``old`` to ``new``.
    ``kind == "tie"``: the tie rule had to arbitrate; ``old`` holds the tied
    group at the cutoff distance and ``new`` the resulting set.
    """

    time: float
    particle: int
    old: tuple
    new: tuple
    kind: str = "switch"


def _row_neighbors(d_row, i, q, rule, rank_self):
    """(neighbors, tied group) of particle ``i``; the group is empty unless the rule arbitrated."""
    n = d_row.shape[0]
    others = np.array([j for j in range(n) if j != i], dtype=np.int64)
    slots = q - 1 if rank_self else q
    empty = np.empty(0, dtype=np.int64)
    if slots <= 0:
        return empty, empty
    d = d_row[others]
    order = np.lexsort((others, d))
    cutoff = d[order[slots - 1]]
    tol = TIE_TOL * (1.0 + cutoff)
    strict = others[d < cutoff - tol]
    tied = np.sort(others[np.abs(d - cutoff) <= tol])
    if rule == "lowest_index":
        chosen = np.concatenate([strict, tied[: slots - strict.shape[0]]])
    else:
        chosen = np.concatenate([strict, tied])
    ambiguous = strict.shape[0] + tied.shape[0] > slots
    return np.sort(chosen), (tied if ambiguous else empty)


def _check_q(q, n, rank_self):
    hi = n if rank_self else n - 1
    lo = 2 if rank_self else 1
    if int(q) != q or not lo <= q <= hi:
        raise ValueError(f"q must be an integer in [{lo}, {hi}] for N = {n}, got {q}")
    return int(q)


def neighbor_set(
    state: PhaseState,
    i: int,
    q: int,
    rule: TieRule | str = "lowest_index",
    geometry: DomainGeometry | None = None,
    rank_self: bool = False,
) -> np.ndarray:
    """Sorted indices of the ``q``-closest neighbors of particle ``i``.

    Distances within ``1e-12 (1 + cutoff)`` of the cutoff distance count as
    tied.  Particle ``i`` itself is never returned.
    """
    rule = rule if isinstance(rule, TieRule) else TieRule(rule)
    geometry = geometry or DomainGeometry("euclidean", state.dim)
    q = _check_q(q, state.n, rank_self)
    d_row = geometry.distance(state.positions, state.positions[i])
    return _row_neighbors(d_row, i, q, rule.kind, rank_self)[0]


class ClassicalModel:
    """Neighbor structure and right-hand side of the sharp system."""

    variant = "classical"

    def __init__(
        self,
        q: int,
        rule: TieRule | str = "lowest_index",
        weight: CommWeight | None = None,
        geometry: DomainGeometry | None = None,
        rank_self: bool = False,
    ):
        self.q = q
        self.rule = rule if isinstance(rule, TieRule) else TieRule(rule)
        self.weight = weight or CommWeight()
        self.geometry = geometry
        self.rank_self = bool(rank_self)

    def neighbors(self, x, with_ties=False):
        """List of neighbor index arrays, one per particle (plus tied groups)."""
        geo = self.geometry or DomainGeometry("euclidean", x.shape[1])
        n = x.shape[0]
        q = _check_q(self.q, n, self.rank_self)
        dmat = geo.pairwise_distances(x)
        rows = [_row_neighbors(dmat[i], i, q, self.rule.kind, self.rank_self) for i in range(n)]
        sets = [r[0] for r in rows]
        if with_ties:
            return sets, [r[1] for r in rows]
        return sets, dmat

    def interaction_matrix(self, x, sets=None):
        """Matrix ``W`` with ``dv_i/dt = sum_j W_ij (v_j - v_i)`` for frozen sets."""
        if sets is None:
            sets, dmat = self.neighbors(x)
        else:
            geo = self.geometry or DomainGeometry("euclidean", x.shape[1])
            dmat = geo.pairwise_distances(x)
        n = x.shape[0]
        w = np.zeros((n, n))
        for i, nb in enumerate(sets):
            if nb.shape[0] == 0:
                continue
            # inclusive: divide by the number of occupied rank slots
            denom = nb.shape[0] + int(self.rank_self) if self.rule.kind == "inclusive" else self.q
            w[i, nb] = self.weight(dmat[i, nb]) / denom
        return w

    def acceleration(self, x, v, sets=None):
        w = self.interaction_matrix(x, sets)
        return w @ v - w.sum(axis=1)[:, None] * v


def classical_rhs(
    state: PhaseState,
    q: int,
    rule: TieRule | str = "lowest_index",
    weight: CommWeight | None = None,
    geometry: DomainGeometry | None = None,
    rank_self: bool = False,
) -> np.ndarray:
    """Velocity right-hand side ``-(1/q) sum_{j in N_i} psi_ij (v_i - v_j)``.

    With the inclusive rule the prefactor is ``1/#N_i`` (``1/(#N_i + 1)``
    when the particle occupies a rank slot itself).
    """
    model = ClassicalModel(q, rule, weight, geometry, rank_self)
    return model.acceleration(state.positions, state.velocities)


def _tup(a):
    return tuple(int(j) for j in a)


def classical_integrate(
    model: ClassicalModel,
    state: PhaseState,
    dt: float,
    t_final: float,
    scheme: str = "classical_euler",
    stride: int = 10,
    store_weights: bool = False,
) -> TrajectoryRecord:
    """Fixed-step integration with neighbor sets frozen over each step.

    ``scheme`` is ``"classical_euler"`` (forward Euler) or ``"rk4"`` (RK4
    on the frozen-neighbor vector field; the weight psi still follows the
    stage positions).  Neighbor sets are recomputed at the start of every
    step; each change, and each arbitrated tie, is logged as a
    :class:`SwitchEvent`.
    """
    if scheme not in ("classical_euler", "rk4"):
        raise ValueError(f"unknown classical integrator {scheme!r}")
    geo = model.geometry or DomainGeometry("euclidean", state.dim)
    model.geometry = geo
    steps, times = _step_schedule(t_final, dt)
    if scheme == "classical_euler" and np.any(steps >= 1.0):
        raise InvalidStep(f"forward Euler on the alignment system needs dt < 1, got {dt}")
    mask = record_mask(steps.shape[0], stride)
    step_hull = -np.inf
    dirs = support_directions(state.dim)
    x = geo.wrap(state.positions.copy())
    v = state.velocities.copy()
    events = []
    prev_sets = None
    rec = dict(x=[], v=[], a=[], w=[], change=[])
    prev_w = None
    for k in range(steps.shape[0] + 1):
        t = state.time + times[k]
        sets, ties = model.neighbors(x, with_ties=True)
        for i, new in enumerate(sets):
            if ties[i].shape[0]:
                events.append(SwitchEvent(float(t), i, _tup(ties[i]), _tup(new), "tie"))
            if prev_sets is not None:
                old = prev_sets[i]
                if old.shape != new.shape or np.any(old != new):
                    events.append(SwitchEvent(float(t), i, _tup(old), _tup(new)))
        prev_sets = sets
        w = model.interaction_matrix(x, sets)
        a = w @ v - w.sum(axis=1)[:, None] * v
        if mask[k]:
            rec["x"].append(x.copy())
            rec["v"].append(v.copy())
            rec["a"].append(a)
            rec["w"].append(w)
            rec["change"].append(0.0 if prev_w is None else float(np.abs(w - prev_w).max()))
            prev_w = w
        if k == steps.shape[0]:
            break
        h = steps[k]
        if scheme == "classical_euler":
            x_new = x + h * v
            v_new = v + h * a
        else:
            k2x = v + 0.5 * h * a
            k2v = model.acceleration(geo.wrap(x + 0.5 * h * v), k2x, sets)
            k3x = v + 0.5 * h * k2v
            k3v = model.acceleration(geo.wrap(x + 0.5 * h * k2x), k3x, sets)
            k4x = v + h * k3v
            k4v = model.acceleration(geo.wrap(x + h * k3x), k4x, sets)
            x_new = x + h / 6.0 * (v + 2.0 * k2x + 2.0 * k3x + k4x)
            v_new = v + h / 6.0 * (a + 2.0 * k2v + 2.0 * k3v + k4v)
        grow = float(((v_new @ dirs.T).max(axis=0) - (v @ dirs.T).max(axis=0)).max())
        step_hull = max(step_hull, grow)
        x, v = geo.wrap(x_new), v_new
    xs, vs, acc = np.array(rec["x"]), np.array(rec["v"]), np.array(rec["a"])
    diagnostics = trajectory_diagnostics(geo, xs, vs, acc)
    diagnostics["weight_change"] = np.array(rec["change"])
    meta = dict(
        variant="classical",
        scheme=scheme,
        dt=float(dt),
        t_final=float(t_final),
        q=model.q,
        tie_rule=model.rule.kind,
        rank_self=model.rank_self,
        stride=int(stride),
        note="frozen-neighbor integration: one selection among possibly many solutions",
    )
    return TrajectoryRecord(
        times=state.time + times[mask],
        positions=xs,
        velocities=vs,
        accelerations=acc,
        radii=None,
        weights=np.array(rec["w"]) if store_weights else None,
        diagnostics=diagnostics,
        step_hull_violation=step_hull if steps.shape[0] else 0.0,
        events=events,
        meta=meta,
    )


def simulate_classical(scenario) -> TrajectoryRecord:
    """Run a classical scenario end to end (see :mod:`qclosest.scenario`)."""
    from .scenario import build_model, initial_state

    if scenario.model.variant != "classical":
        raise ValueError("simulate_classical() needs a classical scenario")
    model = build_model(scenario)
    integ = scenario.integrator
    return classical_integrate(model, initial_state(scenario), integ.dt, integ.t_final, integ.scheme, scenario.output.stride)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x (NaN if any y is zero)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or x.shape[0] < 2:
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class GapTable:
    """Separation of the +eps and -eps runs of one designated particle."""

    epsilons: np.ndarray
    gaps: np.ndarray
    t_eval: float
    label: str = ""
    slope: float = field(init=False)

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=float)
        self.gaps = np.asarray(self.gaps, dtype=float)
        self.slope = loglog_slope(self.epsilons, self.gaps)

    def rows(self):
        return [dict(epsilon=float(e), gap=float(g)) for e, g in zip(self.epsilons, self.gaps)]


def instability_gap(run, perturbed_state, epsilons, t_eval: float, particle: int = 0, label: str = "") -> GapTable:
    """Gap ``|x_p^{+eps}(t_eval) - x_p^{-eps}(t_eval)|`` for each ``eps``.

    Parameters
    ----------
    run : callable
        ``run(state, t_eval) -> TrajectoryRecord``; the same numerics are
        used for both signs.
    perturbed_state : callable
        ``perturbed_state(eps) -> PhaseState`` (``eps`` may be negative).
    """
    gaps = []
    for eps in epsilons:
        plus = run(perturbed_state(float(eps)), t_eval).final_state().positions[particle]
        minus = run(perturbed_state(-float(eps)), t_eval).final_state().positions[particle]
        gaps.append(float(np.linalg.norm(plus - minus)))
    return GapTable(np.asarray(epsilons, dtype=float), np.array(gaps), float(t_eval), label)
