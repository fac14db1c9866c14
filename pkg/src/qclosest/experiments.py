"""Experiment drivers: Lipschitz constants, stability sweeps, nested mean-field
sampling, the ill-posedness gap and long-horizon clustering diagnostics.

Every driver takes a :class:`~qclosest.scenario.Scenario` describing the
numerics and returns a dataclass report with a ``to_dict`` for the JSON
writers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from .classical import GapTable, classical_integrate, instability_gap, loglog_slope
from .dynamics import PhaseState, TrajectoryRecord, integrate
from .kernel import UNIT_BALL_VOLUME, BallMassKernel, MollifierSpec
from .scenario import (
    Scenario,
    build_kernel,
    build_model,
    example1_state,
    initial_state,
    make_rng,
    sample_distinct,
)
from .transport import EmpiricalMeasure, w2

__all__ = [
    "TheoreticalConstants",
    "theoretical_constants",
    "StabilityReport",
    "perturb_to_distance",
    "run_stability",
    "MeanFieldReport",
    "nested_samples",
    "run_meanfield",
    "IllposedReport",
    "run_illposed",
    "ConjectureDiagnostics",
    "stabilization_time",
    "run_conjecture",
    "run_scenario",
]

EDGE_THRESHOLD = 1e-6
TOL_ACCEL = 1e-6
HORIZON = 50.0


def _plain(obj):
    """JSON-ready copy: arrays to lists, numpy scalars to Python scalars."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def run_scenario(s: Scenario, state: PhaseState | None = None, store_weights: bool = False) -> TrajectoryRecord:
    """Integrate a scenario (optionally from a substitute initial state)."""
    model = build_model(s)
    state = initial_state(s) if state is None else state
    it = s.integrator
    if s.model.variant == "fuzzy":
        return integrate(model, state, it.dt, it.t_final, it.scheme, s.output.stride, store_weights)
    return classical_integrate(model, state, it.dt, it.t_final, it.scheme, s.output.stride, store_weights)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class TheoreticalConstants:
    """Force Lipschitz constants and the Gronwall exponent of the stability estimate."""

    c0: float
    c1: float
    c2: float
    bound_exponent: float
    lip_phi: float
    sup_phi: float
    omega_d: float
    L: float

    def to_dict(self):
        return _plain(asdict(self))


def theoretical_constants(D_x, D_v, eta, kernel, dim=None, T=1.0) -> TheoreticalConstants:
    """Evaluate ``c0, c1, c2`` and ``2 c2 + c1^2 exp(2 c2 T)``.

    ``c0 = max(1/eta, 2 d D_x^(d-1) D_v + (2/eta) D_x^d Lip D_v)``,
    ``L = Lip D_v + |phi|_inf``, ``c1 = omega_d D_x^d (L + D_v) / eta``,
    ``c2 = 1 + c0^2``.

    Parameters
    ----------
    kernel : MollifierSpec or BallMassKernel
    dim : int, optional
        Defaults to the kernel dimension.
    """
    spec = kernel.spec if isinstance(kernel, BallMassKernel) else kernel
    if not isinstance(spec, MollifierSpec):
        raise TypeError("kernel must be a MollifierSpec or BallMassKernel")
    d = spec.dim if dim is None else int(dim)
    if not (D_x >= 0 and D_v >= 0 and eta > 0 and T >= 0):
        raise ValueError("need D_x, D_v, T >= 0 and eta > 0")
    lip = float(spec.lipschitz_constant())
    sup = float(spec.sup_norm())
    omega = UNIT_BALL_VOLUME[d]
    c0 = max(1.0 / eta, 2.0 * d * D_x ** (d - 1) * D_v + (2.0 / eta) * D_x**d * lip * D_v)
    L = lip * D_v + sup
    c1 = omega * D_x**d / eta * (L + D_v)
    c2 = 1.0 + c0 * c0
    # the exponent overflows double precision for moderate c2 T
    log_tail = 2.0 * math.log(c1) + 2.0 * c2 * T if c1 > 0 else -math.inf
    bound = 2.0 * c2 + c1 * c1 * math.exp(2.0 * c2 * T) if log_tail < 709.0 else math.inf
    return TheoreticalConstants(c0, c1, c2, bound, lip, sup, omega, L)


def _constants_for(s: Scenario, state: PhaseState, T: float) -> TheoreticalConstants:
    mu = EmpiricalMeasure.from_state(state)
    eta = s.model.q_value / s.model.n
    return theoretical_constants(mu.position_diameter, mu.velocity_diameter, eta, build_kernel(s).spec, T=T)


# ---------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    """Sup-ratios of the W2 distance between a base and perturbed runs.

    ``series[k]`` is ``W2(f_t, f~_t)`` at ``times`` for ``delta0[k]``.
    ``fitted_rate`` is the one-sided exponential fit of the ratios (every
    recorded ratio is at most ``exp(fitted_rate t)``); ``lsq_rate`` the
    least-squares fit through the origin.
    ``bound_ratio`` is the largest ``W2(t) / (exp(bound_exponent t) W2(0))``;
    ``squared_ratio`` compares against the squared-data form
    ``exp(bound_exponent t) W2(0)^2`` (logged only).
    """

    delta0: np.ndarray
    sup_w2: np.ndarray
    sup_ratio: np.ndarray
    fitted_rate: float
    theoretical_bound_exponent: float
    slope: float
    lsq_rate: float
    times: np.ndarray
    series: np.ndarray
    bound_ratio: float
    squared_ratio: float
    constants: TheoreticalConstants

    @property
    def bound_ok(self) -> bool:
        return bool(self.bound_ratio <= 1.0 + 1e-3)

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("delta0", "sup_w2", "sup_ratio", "fitted_rate", "lsq_rate", "slope", "bound_ratio", "squared_ratio")}
        d["theoretical_bound_exponent"] = self.theoretical_bound_exponent
        d["bound_ok"] = self.bound_ok
        d["times"] = self.times
        d["w2_series"] = self.series
        d["constants"] = self.constants.to_dict()
        return _plain(d)


def perturb_to_distance(state: PhaseState, delta: float, rng: np.random.Generator) -> PhaseState:
    """Displace every atom by i.i.d. uniform vectors, rescaled so that W2 = delta.

    The displacement direction is fixed; its scale is solved so the exact
    W2 between the two empirical measures equals ``delta`` to 1e-12 relative.
    """
    mu = EmpiricalMeasure.from_state(state)
    z = mu.atoms
    dz = rng.uniform(-1.0, 1.0, size=z.shape)
    d = state.dim

    def moved(scale):
        zz = z + scale * dz
        return PhaseState(zz[:, :d], zz[:, d:], state.time)

    def dist(scale):
        return w2(mu, EmpiricalMeasure.from_state(moved(scale)))

    # W2 is at most linear in the scale; start from the identity pairing
    scale = delta / math.sqrt(np.mean((dz * dz).sum(1)))
    for _ in range(8):
        got = dist(scale)
        if abs(got - delta) <= 1e-12 * delta:
            return moved(scale)
        scale *= delta / got
    hi = scale
    while dist(hi) < delta:
        hi *= 2.0
    scale = brentq(lambda c: dist(c) - delta, 0.0, hi, xtol=1e-15 * hi, rtol=1e-15)
    return moved(scale)


def _fit_rates(times, ratios):
    """One-sided and least-squares exponential rates of ``ratios(t)``.

    The one-sided fit is the smallest ``K`` with ``log ratio <= K t`` at
    every recorded ``t > 0``; the least-squares fit is through the origin.
    """
    t = np.repeat(times[None, :], ratios.shape[0], axis=0).ravel()
    y = np.log(ratios).ravel()
    keep = t > 0
    if not np.any(keep):
        return 0.0, 0.0
    t, y = t[keep], y[keep]
    return float(np.max(y / t)), float(np.dot(t, y) / np.dot(t, t))


def run_stability(base: Scenario, deltas=(1e-1, 1e-2, 1e-3, 1e-4), T: float | None = None, seed: int | None = None, state: PhaseState | None = None) -> StabilityReport:
    """Perturbation sweep: W2 between the base run and runs from data at W2 distance ``delta``.

    All runs share the base scenario's numerics.  The perturbation
    directions are drawn from the scenario seed (or ``seed``).  ``state``
    replaces the scenario's initial data.
    """
    if base.model.variant != "fuzzy":
        raise ValueError("stability sweeps run the fuzzy system")
    s = base if T is None else replace(base, integrator=replace(base.integrator, t_final=float(T)))
    T = s.integrator.t_final
    if state is None:
        state = initial_state(s)
    else:
        s = replace(s, model=replace(s.model, n=state.n, q=None, eta=s.model.q_value / s.model.n))
    ref = run_scenario(s, state)
    rng = make_rng(s.init.seed if seed is None else seed)
    times = ref.times - ref.times[0]
    series = []
    for delta in deltas:
        other = run_scenario(s, perturb_to_distance(state, float(delta), rng))
        series.append([w2(EmpiricalMeasure(ref.positions[k], ref.velocities[k]), EmpiricalMeasure(other.positions[k], other.velocities[k])) for k in range(ref.n_records)])
    series = np.array(series)
    deltas = np.asarray(deltas, dtype=float)
    w0 = series[:, 0]
    ratios = series / w0[:, None]
    sup_w2 = series.max(axis=1)
    rate, lsq = _fit_rates(times, ratios)
    consts = _constants_for(s, state, T)
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.where(times > 0, np.exp(consts.bound_exponent * times), 1.0)
        bound_ratio = float(np.max(series / (growth[None, :] * w0[:, None])))
        squared_ratio = float(np.max(series / (growth[None, :] * (w0**2)[:, None])))
    return StabilityReport(
        delta0=w0,
        sup_w2=sup_w2,
        sup_ratio=ratios.max(axis=1),
        fitted_rate=rate,
        theoretical_bound_exponent=consts.bound_exponent,
        slope=loglog_slope(w0, sup_w2),
        lsq_rate=lsq,
        times=times,
        series=series,
        bound_ratio=bound_ratio,
        squared_ratio=squared_ratio,
        constants=consts,
    )


# ---------------------------------------------------------------------------
# mean field


@dataclass
class MeanFieldReport:
    """W2 between nested empirical solutions with ``N`` and ``2N`` atoms.

    ``pairwise_w2[s, k, j]``: seed ``s``, pair ``(n_values[k], 2 n_values[k])``,
    time ``eval_times[j]`` (0, T/2, T).  ``amplification = W2(T) / W2(0)``.
    """

    n_values: np.ndarray
    seeds: np.ndarray
    eval_times: np.ndarray
    pairwise_w2: np.ndarray
    initial_w2: np.ndarray
    amplification: np.ndarray
    fitted_rate: float | None = None
    seed_rates: np.ndarray | None = None

    @property
    def median_final(self) -> np.ndarray:
        return np.median(self.pairwise_w2[:, :, -1], axis=0)

    @property
    def trend_decreasing(self) -> bool:
        m = self.median_final
        return bool(np.all(np.diff(m) < 0))

    def amplification_ok(self, slack: float = 0.1) -> bool | None:
        if self.fitted_rate is None:
            return None
        T = float(self.eval_times[-1])
        return bool(np.all(self.amplification <= math.exp(self.fitted_rate * T) * (1.0 + slack)))

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("n_values", "seeds", "eval_times", "pairwise_w2", "initial_w2", "amplification", "fitted_rate", "seed_rates")}
        d["median_final"] = self.median_final
        d["trend_decreasing"] = self.trend_decreasing
        d["amplification_ok"] = self.amplification_ok()
        return _plain(d)


def nested_samples(kind: str, params: dict, n_max: int, dim: int, seed: int) -> PhaseState:
    """``n_max`` sequential i.i.d. draws with pairwise distinct positions.

    The first ``N`` rows form the ``N``-point sample, so every sample is
    the first half of the next one.
    """
    x, v = sample_distinct(kind, params, n_max, dim, make_rng(seed))
    return PhaseState(x, v)


def family_rate(base: Scenario, n: int, seeds, T: float | None = None, deltas=(1e-1, 1e-2, 1e-3, 1e-4)) -> tuple[float, np.ndarray]:
    """Largest fitted stability rate over the ``n``-point nested samples of ``seeds``.

    Returns the family rate and the per-seed rates.
    """
    rates = []
    for seed in seeds:
        st = nested_samples(base.init.kind, base.init.params, int(n), base.domain.dim, int(seed))
        rates.append(run_stability(base, deltas, T=T, seed=int(seed), state=st).fitted_rate)
    rates = np.array(rates)
    return float(rates.max()), rates


def run_meanfield(base: Scenario, n_values=(32, 64, 128, 256), seeds=(0, 1, 2, 3, 4), T: float | None = None, fitted_rate: float | None = None) -> MeanFieldReport:
    """Nested-sample mean-field study on the base scenario's sampler and numerics.

    ``q`` is rescaled as ``eta N`` for each size, ``eta`` taken from the
    base scenario.  Without an explicit ``fitted_rate`` the amplification
    check uses :func:`family_rate` on the smallest samples.
    """
    if base.init.kind not in ("uniform_box", "two_clusters"):
        raise ValueError("mean-field sampling needs a random initial-data kind")
    n_values = np.asarray(sorted(n_values), dtype=int)
    T = base.integrator.t_final if T is None else float(T)
    eta = base.model.q_value / base.model.n
    stride_T = max(1, int(round(T / 2 / base.integrator.dt)))
    eval_times = np.array([0.0, T / 2, T])
    seed_rates = None
    if fitted_rate is None:
        fitted_rate, seed_rates = family_rate(base, int(n_values[0]), seeds, T=T)
    out = np.empty((len(seeds), len(n_values), 3))
    for a, seed in enumerate(seeds):
        full = nested_samples(base.init.kind, base.init.params, 2 * int(n_values[-1]), base.domain.dim, int(seed))
        cache = {}

        def records(n):
            if n not in cache:
                m = replace(base.model, n=int(n), q=None, eta=eta)
                s = replace(
                    base,
                    model=m,
                    integrator=replace(base.integrator, t_final=T),
                    output=replace(base.output, stride=stride_T),
                )
                st = PhaseState(full.positions[:n], full.velocities[:n])
                rec = run_scenario(s, st)
                idx = [int(np.argmin(np.abs(rec.times - t))) for t in eval_times]
                cache[n] = [EmpiricalMeasure(rec.positions[k], rec.velocities[k]) for k in idx]
            return cache[n]

        for b, n in enumerate(n_values):
            small, big = records(int(n)), records(2 * int(n))
            out[a, b] = [w2(small[j], big[j]) for j in range(3)]
    return MeanFieldReport(
        n_values=n_values,
        seeds=np.asarray(seeds),
        eval_times=eval_times,
        pairwise_w2=out,
        initial_w2=out[:, :, 0],
        amplification=out[:, :, -1] / out[:, :, 0],
        fitted_rate=fitted_rate,
        seed_rates=seed_rates,
    )


# ---------------------------------------------------------------------------
# ill-posedness


@dataclass
class IllposedReport:
    """Gap tables for the classical and the fuzzy system on the two-pair layout."""

    classical: GapTable
    fuzzy: GapTable | None
    switch_events: int

    def to_dict(self):
        d = {"classical": {"rows": self.classical.rows(), "slope": self.classical.slope, "min_gap": float(self.classical.gaps.min())}}
        if self.fuzzy is not None:
            d["fuzzy"] = {"rows": self.fuzzy.rows(), "slope": self.fuzzy.slope}
        d["switch_events"] = self.switch_events
        return _plain(d)


def run_illposed(classical: Scenario, fuzzy: Scenario | None = None, epsilons=(1e-1, 1e-2, 1e-3, 1e-4), t_eval: float | None = None) -> IllposedReport:
    """Gap ``|x_0^{+eps} - x_0^{-eps}|`` at ``t_eval`` for the lifted middle particle."""

    def runner(s):
        def run(state, t):
            return run_scenario(replace(s, integrator=replace(s.integrator, t_final=t)), state)

        return run

    t_c = classical.integrator.t_final if t_eval is None else float(t_eval)
    ctab = instability_gap(runner(classical), example1_state, epsilons, t_c, 0, "classical")
    exact = run_scenario(replace(classical, integrator=replace(classical.integrator, t_final=t_c)), example1_state(0.0))
    ftab = None
    if fuzzy is not None:
        t_f = fuzzy.integrator.t_final if t_eval is None else float(t_eval)
        ftab = instability_gap(runner(fuzzy), example1_state, epsilons, t_f, 0, "fuzzy")
    return IllposedReport(ctab, ftab, len(exact.events))


# ---------------------------------------------------------------------------
# conjecture


@dataclass
class ConjectureDiagnostics:
    """Long-horizon clustering diagnostics.

    ``components[k]`` labels the weakly connected components of the graph
    with an edge ``i -> j`` iff ``theta_ij > threshold`` at ``times[k]``.
    """

    times: np.ndarray
    max_accel: np.ndarray
    weight_change: np.ndarray
    stabilization_time: float | None
    components: np.ndarray
    n_components: np.ndarray
    tol_accel: float
    threshold: float

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("times", "max_accel", "weight_change", "stabilization_time", "n_components", "tol_accel", "threshold")}
        d["final_components"] = self.components[-1]
        d["weight_change_tail_max"] = float(self.weight_change[self.times >= 0.5 * self.times[-1]].max())
        return _plain(d)


def stabilization_time(times, max_accel, tol_accel) -> float | None:
    """First recorded time after which ``max_accel < tol_accel`` through the end."""
    bad = np.flatnonzero(~(np.asarray(max_accel) < tol_accel))
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == len(times) - 1:
        return None
    return float(times[bad[-1] + 1])


def run_conjecture(s: Scenario, horizon: float = HORIZON, tol_accel: float = TOL_ACCEL, threshold: float = EDGE_THRESHOLD) -> ConjectureDiagnostics:
    """Run to ``horizon`` and report acceleration decay, weight drift and clusters."""
    s = replace(s, integrator=replace(s.integrator, t_final=float(horizon)))
    rec = run_scenario(s, store_weights=True)
    labels = np.empty((rec.n_records, rec.positions.shape[1]), dtype=int)
    counts = np.empty(rec.n_records, dtype=int)
    for k in range(rec.n_records):
        graph = sparse.csr_matrix(rec.weights[k] > threshold)
        counts[k], labels[k] = connected_components(graph, directed=True, connection="weak")
    acc = rec.diagnostics["max_accel"]
    return ConjectureDiagnostics(
        times=rec.times,
        max_accel=acc,
        weight_change=rec.diagnostics["weight_change"],
        stabilization_time=stabilization_time(rec.times, acc, tol_accel),
        components=labels,
        n_components=counts,
        tol_accel=float(tol_accel),
        threshold=float(threshold),
    )
